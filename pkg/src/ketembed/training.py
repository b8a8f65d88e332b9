"""Optimizers, finite-difference gradient checking and fitting objectives.

Models are duck-typed: anything with ``parameters()``, ``gather(words)``,
``backward(words, upstream)``, ``shape`` and ``n_rows`` works, which covers
:class:`~ketembed.word2ket.KetEmbedding` and
:class:`~ketembed.word2ketxs.KetXSOperator`.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    """SGD or Adam state. Moments are created lazily, congruent to the parameters."""

    kind: str = "adam"
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def step(opt: OptimizerState, params: dict, grads: dict) -> dict:
    """Update ``params`` in place and return them."""
    if set(params) != set(grads):
        raise ValueError("parameter and gradient names differ")
    for k in params:
        if params[k].shape != grads[k].shape:
            raise ValueError(f"shape mismatch for {k!r}: {params[k].shape} vs {grads[k].shape}")
    opt.step_count += 1
    if opt.kind == "sgd":
        for k, p in params.items():
            p -= opt.learning_rate * grads[k]
        return params
    bc1 = 1.0 - opt.beta1**opt.step_count
    bc2 = 1.0 - opt.beta2**opt.step_count
    for k, p in params.items():
        g = grads[k]
        if k not in opt.m:
            opt.m[k] = np.zeros_like(p)
            opt.v[k] = np.zeros_like(p)
        m, v = opt.m[k], opt.v[k]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p -= opt.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return params


def _loss(model, words, upstream) -> float:
    return float(np.sum(upstream * model.gather(words)))


def grad_check(model, words, seed: int = 0, h: float = 1e-5) -> float:
    """Max relative error between ``model.backward`` and central differences.

    The scalar checked is ``sum(U * gather(words))`` for a random ``U``.
    Every parameter entry is perturbed, so keep the model small.
    """
    rng = np.random.default_rng(seed)
    words = np.asarray(words, dtype=np.int64)
    upstream = rng.standard_normal((words.size, model.shape.p))
    analytic = model.backward(words, upstream)
    worst = 0.0
    for name, arr in model.parameters().items():
        flat = arr.reshape(-1)
        g = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss(model, words, upstream)
            flat[i] = orig - h
            down = _loss(model, words, upstream)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            err = abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8)
            worst = max(worst, err)
    return worst


@dataclass
class FitReport:
    iterations: int
    final_mse: float
    mse_history: list
    wall_time: float
    param_count: int
    space_saving_rate: float
    epoch_times: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        """One JSON record per epoch: ``epoch``, ``mse``, ``wall_time``."""
        lines = [
            json.dumps({"epoch": i + 1, "mse": mse, "wall_time": t})
            for i, (mse, t) in enumerate(zip(self.mse_history, self.epoch_times))
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def summary(self) -> dict:
        out = asdict(self)
        del out["mse_history"], out["epoch_times"]
        return out


def masked_mse(model, target: np.ndarray, mask_rows_at: int) -> float:
    if mask_rows_at == 0:
        return 0.0
    rows = model.gather(np.arange(mask_rows_at))
    return float(np.mean((rows - target[:mask_rows_at]) ** 2))


def fit_dense(
    target,
    model,
    opt: OptimizerState | None = None,
    epochs: int = 100,
    batch_rows: int | None = None,
    mask_rows_at: int | None = None,
    seed: int = 0,
    callback=None,
) -> FitReport:
    """Fit ``model`` to the rows of ``target`` by minibatch MSE.

    Each epoch draws ``ceil(mask_rows_at / batch_rows)`` batches of row
    indices uniformly with replacement from ``[0, mask_rows_at)``; rows at or
    beyond ``mask_rows_at`` never enter the loss. When ``batch_rows`` covers
    every unmasked row (the default) each epoch is a single full-batch step.
    The full masked MSE is recorded after every epoch.
    """
    target = np.asarray(target, dtype=np.float64)
    d = model.n_rows
    if target.ndim != 2 or target.shape[1] != model.shape.p:
        raise ValueError(f"target must be (rows, {model.shape.p}), got {target.shape}")
    if target.shape[0] < d or target.shape[0] > model.shape.full_rows:
        raise ValueError(
            f"target has {target.shape[0]} rows; expected between {d} and {model.shape.full_rows}"
        )
    mask_rows_at = d if mask_rows_at is None else mask_rows_at
    if not 0 < mask_rows_at <= d:
        raise ValueError(f"mask_rows_at must be in (0, {d}]")
    batch_rows = mask_rows_at if batch_rows is None else batch_rows
    if batch_rows < 1:
        raise ValueError("batch_rows must be >= 1")
    opt = OptimizerState() if opt is None else opt
    rng = np.random.default_rng(seed)
    params = model.parameters()
    full_batch = batch_rows >= mask_rows_at
    per_epoch = 1 if full_batch else math.ceil(mask_rows_at / batch_rows)
    all_rows = np.arange(mask_rows_at)
    history, times = [], []
    start = time.perf_counter()
    iterations = 0
    for epoch in range(epochs):
        for _ in range(per_epoch):
            words = all_rows if full_batch else rng.integers(0, mask_rows_at, size=batch_rows)
            residual = model.gather(words) - target[words]
            upstream = (2.0 / residual.size) * residual
            step(opt, params, model.backward(words, upstream))
            iterations += 1
        history.append(masked_mse(model, target, mask_rows_at))
        times.append(time.perf_counter() - start)
        if callback is not None:
            callback(epoch, history[-1])
    wall = time.perf_counter() - start
    return FitReport(
        iterations=iterations,
        final_mse=history[-1] if history else masked_mse(model, target, mask_rows_at),
        mse_history=history,
        wall_time=wall,
        param_count=model.num_parameters(),
        space_saving_rate=model.shape.dense_count / model.num_parameters(),
        epoch_times=times,
    )


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.where(norms == 0, 1.0, norms)


def top_k_cosine(matrix: np.ndarray, query_rows, k: int, exclude_self: bool = True) -> list:
    """Indices of the ``k`` nearest rows by cosine, ties broken by lower index."""
    unit = _unit_rows(np.asarray(matrix, dtype=np.float64))
    out = []
    for qi in query_rows:
        sims = unit @ unit[qi]
        if exclude_self:
            sims[qi] = -np.inf
        # lexsort: last key is primary
        order = np.lexsort((np.arange(sims.size), -sims))
        limit = min(k, sims.size - (1 if exclude_self else 0))
        out.append(order[:limit])
    return out


def jaccard(a, b) -> float:
    a, b = set(map(int, a)), set(map(int, b))
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def retrieval_probe(original, compressed, k: int = 10, n_queries: int = 100, seed: int = 0) -> float:
    """Mean Jaccard overlap of top-``k`` cosine neighbours, original vs compressed.

    Queries are sampled without replacement; the query row itself is
    excluded from its own neighbour list.
    """
    original = np.asarray(original, dtype=np.float64)
    d = original.shape[0]
    rng = np.random.default_rng(seed)
    queries = rng.choice(d, size=min(n_queries, d), replace=False)
    rebuilt = compressed.gather(np.arange(d))
    ref = top_k_cosine(original, queries, k)
    got = top_k_cosine(rebuilt, queries, k)
    return float(np.mean([jaccard(a, b) for a, b in zip(ref, got)]))


def chance_jaccard(d: int, k: int) -> tuple[float, float]:
    """Mean and std of the Jaccard index of two independent uniform ``k``-subsets of ``d - 1`` items."""
    from scipy.stats import hypergeom

    pool = d - 1
    x = np.arange(0, k + 1)
    pmf = hypergeom(pool, k, k).pmf(x)
    jac = x / (2 * k - x)
    mean = float(np.sum(pmf * jac))
    std = float(np.sqrt(np.sum(pmf * (jac - mean) ** 2)))
    return mean, std
