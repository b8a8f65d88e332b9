"""Gather latency and memory accounting, factored vs dense."""
from __future__ import annotations

import time

import numpy as np

from .shape import FactoredShape
from .word2ket import new_ket_embedding
from .word2ketxs import AllocationMeter, gather_rows_lean, new_ketxs


def _timed(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(shape: FactoredShape, batch: int = 32, repeats: int = 5, seed: int = 0, scalar_width: int = 8) -> dict:
    """Time a ``batch``-row gather and account its memory.

    Dense figures are for a plain ``d x p`` lookup table. For word2ketXS the
    transient footprint comes from the metered lean gather; word2ket's
    per-word gather materializes ``b * r * q**n`` tree outputs, reported as
    ``transient_elements`` without a lean path.
    """
    rng = np.random.default_rng(seed)
    words = rng.integers(0, shape.d, size=batch)
    report = {
        "mode": "ket" if shape.is_ket else "xs",
        "d": shape.d, "p": shape.p, "n": shape.n, "r": shape.r, "q": shape.q, "t": shape.t,
        "batch": batch,
        "dense_elements": shape.d * shape.p,
        "dense_bytes": shape.d * shape.p * scalar_width,
        "param_elements": shape.param_count,
        "param_bytes": shape.param_count * scalar_width,
        "transient_bound": batch * shape.p + shape.full_dim,
    }
    if shape.is_ket:
        model = new_ket_embedding(shape, seed=seed, layernorm=False)
        report["transient_elements"] = batch * shape.r * shape.full_dim + batch * shape.p
        report["gather_seconds"] = _timed(lambda: model.gather(words), repeats)
    else:
        model = new_ketxs(shape, seed=seed)
        meter = AllocationMeter()
        gather_rows_lean(model, words, meter)
        report["transient_elements"] = meter.peak
        report["gather_seconds"] = _timed(lambda: model.gather(words), repeats)
        report["lean_gather_seconds"] = _timed(lambda: gather_rows_lean(model, words), repeats)
    if shape.d * shape.p <= 2**26:
        dense = np.zeros((shape.d, shape.p))
        report["dense_gather_seconds"] = _timed(lambda: dense[words], repeats)
    report["within_bound"] = report["transient_elements"] <= report["transient_bound"]
    return report
