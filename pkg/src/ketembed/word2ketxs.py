"""word2ketXS: the whole ``d x p`` embedding matrix as a sum of Kronecker products.

    M = sum_k  F_1k (x) F_2k (x) ... (x) F_nk

Each factor is stored as a ``t x q`` array (embedding orientation: rows are
indexed by word digits, columns by embedding digits), so the parameters form
one ``(r, n, t, q)`` array. Row ``i`` of ``M`` is rebuilt from one row per
factor, selected by the base-``t`` digits of ``i`` (most significant digit ->
``j = 0``). Rows ``>= d`` and columns ``>= p`` exist structurally but are
never exposed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kron
from .shape import FactoredShape
from .word2ket import (
    NORM_PLACEMENTS,
    GradientBundle,
    TensorTree,
    check_indices,
    init_std,
    make_norms,
    norm_parameters,
    tree_backward,
    tree_forward,
    truncate_pad,
)

DEFAULT_BLOCK_ROWS = 1024


def row_digits(words: np.ndarray, t: int, n: int) -> np.ndarray:
    """Base-``t`` digits of each word index, most significant first, shape ``(b, n)``."""
    words = np.asarray(words, dtype=np.int64)
    digits = np.empty((words.size, n), dtype=np.int64)
    rest = words.copy()
    for pos in range(n - 1, -1, -1):
        rest, digits[:, pos] = np.divmod(rest, t)
    return digits


def digits_to_rows(digits: np.ndarray, t: int) -> np.ndarray:
    rows = np.zeros(digits.shape[0], dtype=np.int64)
    for pos in range(digits.shape[1]):
        rows = rows * t + digits[:, pos]
    return rows


@dataclass
class KetXSOperator:
    shape: FactoredShape
    factors: np.ndarray
    norms: list = field(default_factory=list)
    placement: str = "node"

    def __post_init__(self):
        s = self.shape
        if s.is_ket:
            raise ValueError("KetXSOperator needs t >= 1")
        self.factors = np.asarray(self.factors, dtype=np.float64)
        if self.factors.shape != (s.r, s.n, s.t, s.q):
            raise ValueError(f"factors shape {self.factors.shape} != {(s.r, s.n, s.t, s.q)}")
        if self.placement not in NORM_PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        self.tree = TensorTree(s.n, s.q)

    @property
    def layernorm(self) -> bool:
        return bool(self.norms)

    @property
    def n_rows(self) -> int:
        return self.shape.d

    def factor(self, k: int, j: int) -> np.ndarray:
        """The ``t x q`` factor for rank component ``k`` and tensor position ``j``."""
        return self.factors[k, j]

    def parameters(self) -> dict:
        return {"factors": self.factors, **norm_parameters(self.norms)}

    def num_parameters(self) -> int:
        return sum(a.size for a in self.parameters().values())

    def gather(self, words) -> np.ndarray:
        return gather_rows(self, words)

    def backward(self, words, upstream) -> GradientBundle:
        return backward_rows(self, words, upstream)


def new_ketxs(
    shape: FactoredShape,
    seed: int = 0,
    layernorm: bool = False,
    placement: str = "node",
    epsilon: float = 1e-5,
) -> KetXSOperator:
    rng = np.random.default_rng(seed)
    sigma = init_std(shape.n, shape.r)
    factors = rng.normal(0.0, sigma, size=(shape.r, shape.n, shape.t, shape.q))
    tree = TensorTree(shape.n, shape.q)
    return KetXSOperator(shape, factors, make_norms(tree, layernorm, placement, epsilon), placement)


def _selected_leaves(op: KetXSOperator, digits: np.ndarray) -> np.ndarray:
    # (b, r, n, q): row digits[:, j] of every F_jk
    s = op.shape
    j = np.arange(s.n)
    return op.factors[:, j[None, :], digits, :].transpose(1, 0, 2, 3)


def gather_rows(op: KetXSOperator, words, block_rows: int = DEFAULT_BLOCK_ROWS) -> np.ndarray:
    """Rows ``words`` of the embedding matrix, ``(b, p)``.

    Works through the batch ``block_rows`` rows at a time, so the transient
    working set is ``O(block_rows * r * q**n)`` on top of the output.
    """
    s = op.shape
    idx = check_indices(words, s.d)
    out = np.empty((idx.size, s.p))
    for start in range(0, idx.size, block_rows):
        block = idx[start : start + block_rows]
        leaves = _selected_leaves(op, row_digits(block, s.t, s.n))
        rows, _ = tree_forward(op.tree, leaves, op.norms, op.placement)
        out[start : start + block.size] = rows[:, : s.p]
    return out


class AllocationMeter:
    """Element-count ledger for the scratch arrays of :func:`gather_rows_lean`."""

    def __init__(self):
        self.live = 0
        self.peak = 0

    def alloc(self, n: int) -> None:
        self.live += n
        self.peak = max(self.peak, self.live)

    def free(self, n: int) -> None:
        self.live -= n


def gather_rows_lean(op: KetXSOperator, words, meter: AllocationMeter | None = None) -> np.ndarray:
    """Same rows as :func:`gather_rows`, with scratch bounded by ``q**n`` elements.

    One row and one rank component at a time: the balanced left and right
    halves of the product are formed (``q**ceil(n/2)`` and ``q**floor(n/2)``
    entries) and their outer product is accumulated slice by slice into the
    output row. Every array allocated is reported to ``meter``. Only valid
    without LayerNorm.
    """
    if op.layernorm:
        raise ValueError("lean gather does not support LayerNorm nodes")
    meter = AllocationMeter() if meter is None else meter
    s = op.shape
    idx = check_indices(words, s.d)
    out = np.zeros((idx.size, s.p))
    meter.alloc(out.size)
    split = (s.n + 1) // 2
    right_len = s.q ** (s.n - split)
    tmp = np.empty(right_len if s.n > 1 else 0)
    meter.alloc(tmp.size)
    for b, word in enumerate(idx.tolist()):
        digits = kron.unravel_row(word, [s.t] * s.n)
        row = out[b]
        for k in range(s.r):
            sel = [op.factors[k, j, digits[j]] for j in range(s.n)]
            if s.n == 1:
                row += sel[0][: s.p]
                continue
            left, left_owned = _chain(sel[:split], meter)
            right, right_owned = _chain(sel[split:], meter)
            for a in range(left.size):
                lo = a * right_len
                if lo >= s.p:
                    break
                hi = min(lo + right_len, s.p)
                np.multiply(right, left[a], out=tmp)
                row[lo:hi] += tmp[: hi - lo]
            meter.free(left_owned + right_owned)
    meter.free(tmp.size)
    return out


def _chain(vectors, meter: AllocationMeter):
    """Kronecker product of 1-d views; returns ``(array, elements owned)``."""
    out, owned = vectors[0], 0
    for v in vectors[1:]:
        nxt = np.multiply.outer(out, v).ravel()
        meter.alloc(nxt.size)
        meter.free(owned)
        out, owned = nxt, nxt.size
    return out, owned


def full_dense(op: KetXSOperator, budget: int | None = None) -> np.ndarray:
    """The full ``d x p`` matrix. For tests and export; subject to the element budget."""
    s = op.shape
    kron._check_budget(s.d * s.p, budget)
    return gather_rows(op, np.arange(s.d))


def dense_oracle(op: KetXSOperator, budget: int | None = None) -> np.ndarray:
    """Brute-force ``sum_k kron(F_1k, ..., F_nk)`` truncated to ``d x p`` (no LayerNorm)."""
    s = op.shape
    kron._check_budget(s.full_rows * s.full_dim, budget)
    total = np.zeros((s.full_rows, s.full_dim))
    for k in range(s.r):
        m = op.factors[k, 0]
        for j in range(1, s.n):
            m = kron.kron_mat(m, op.factors[k, j], budget=budget)
        total += m
    return total[: s.d, : s.p]


def backward_rows(op: KetXSOperator, words, upstream, block_rows: int = DEFAULT_BLOCK_ROWS) -> GradientBundle:
    """Gradients of ``sum(upstream * gather_rows(op, words))`` w.r.t. every factor.

    Selected factor rows receive the upstream gradient contracted against the
    other positions' selected rows; contributions are scatter-added in batch
    order, so repeated words accumulate and untouched rows stay zero.
    """
    s = op.shape
    idx = check_indices(words, s.d)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (idx.size, s.p):
        raise ValueError(f"upstream shape {upstream.shape} != {(idx.size, s.p)}")
    grads = GradientBundle.zeros_like(op.parameters())
    gf = grads["factors"]
    j = np.arange(s.n)
    for start in range(0, idx.size, block_rows):
        block = idx[start : start + block_rows]
        digits = row_digits(block, s.t, s.n)
        _, cache = tree_forward(op.tree, _selected_leaves(op, digits), op.norms, op.placement)
        g = truncate_pad(upstream[start : start + block.size], s.full_dim)
        dleaves, dnorms = tree_backward(op.tree, g, op.norms, cache, op.placement)
        # dleaves (b, r, n, q) -> factors[k, j, digits[b, j]]
        kk = np.arange(s.r)[None, :, None]
        np.add.at(gf, (kk, j[None, None, :], digits[:, None, :]), dleaves)
        for i, (dg, db) in enumerate(dnorms):
            grads[f"ln{i}.gain"] += dg
            grads[f"ln{i}.bias"] += db
    return grads


def stored_elements(op: KetXSOperator) -> int:
    return math.prod(op.factors.shape) + sum(2 * ln.dim for ln in op.norms)
