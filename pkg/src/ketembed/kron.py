"""Dense Kronecker / tensor-product algebra.

Everything here materializes its result, so these functions double as the
brute-force oracle for the lazy code paths in :mod:`ketembed.word2ket` and
:mod:`ketembed.word2ketxs`. Outputs larger than :data:`ELEMENT_BUDGET`
elements are refused instead of allocated.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

ELEMENT_BUDGET = 2**28


class SizeError(ValueError):
    """Raised when a dense result would exceed the element budget."""


def _check_budget(n_elements: int, budget: int | None) -> None:
    limit = ELEMENT_BUDGET if budget is None else budget
    if n_elements > limit:
        raise SizeError(
            f"dense result of {n_elements} elements exceeds budget of {limit}"
        )


def as_vector(a, name: str = "vector") -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains NaN or Inf")
    return v


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def kron_vec(a, b, budget: int | None = None) -> np.ndarray:
    """Tensor product of two vectors: ``out[i*len(b) + j] = a[i] * b[j]``."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    _check_budget(a.size * b.size, budget)
    return np.multiply.outer(a, b).ravel()


def kron_mat(a, b, budget: int | None = None) -> np.ndarray:
    """Kronecker product of two matrices, built from blocks ``a[i, j] * b``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    _check_budget(rows * cols, budget)
    # (i, k, j, l) -> row i*p + k, column j*q + l
    out = np.multiply.outer(a, b).transpose(0, 2, 1, 3)
    return out.reshape(rows, cols)


def kron_entry(a, b, i: int, j: int) -> float:
    """Single entry of ``kron_mat(a, b)`` without forming the product.

    Indices are 0-based: ``a[i // p, j // q] * b[i % p, j % q]`` with
    ``(p, q) = b.shape``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    p, q = b.shape
    if not (0 <= i < a.shape[0] * p) or not (0 <= j < a.shape[1] * q):
        raise IndexError(
            f"entry ({i}, {j}) out of range for {a.shape[0] * p}x{a.shape[1] * q} product"
        )
    return float(a[i // p, j // q] * b[i % p, j % q])


def unravel_row(i: int, radices: Sequence[int]) -> list[int]:
    """Mixed-radix digits of ``i``, most significant first."""
    digits = [0] * len(radices)
    for pos in range(len(radices) - 1, -1, -1):
        i, digits[pos] = divmod(i, radices[pos])
    return digits


def ravel_row(digits: Sequence[int], radices: Sequence[int]) -> int:
    i = 0
    for d, base in zip(digits, radices):
        i = i * base + d
    return i


def kron_row(factors: Sequence, i: int, budget: int | None = None) -> np.ndarray:
    """Row ``i`` of the iterated Kronecker product of ``factors``.

    Only one row of each factor is touched; the first factor is selected by
    the most significant digit of ``i``.
    """
    mats = [np.asarray(f, dtype=np.float64) for f in factors]
    if not mats:
        raise ValueError("need at least one factor")
    radices = [m.shape[0] for m in mats]
    if not 0 <= i < math.prod(radices):
        raise IndexError(f"row {i} out of range for {math.prod(radices)} rows")
    _check_budget(math.prod(m.shape[1] for m in mats), budget)
    digits = unravel_row(i, radices)
    row = mats[0][digits[0]]
    for m, d in zip(mats[1:], digits[1:]):
        row = np.multiply.outer(row, m[d]).ravel()
    return row.copy()


def simple_tensor_to_dense(factors: Sequence, budget: int | None = None) -> np.ndarray:
    vecs = [as_vector(f, "factor") for f in factors]
    if not vecs:
        raise ValueError("need at least one factor")
    _check_budget(math.prod(v.size for v in vecs), budget)
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v).ravel()
    return out.copy()


def factored_inner(v_factors, w_factors) -> float:
    """Inner product of two sums of simple tensors, computed factor-wise.

    ``v_factors`` is an ``r x n`` grid (nested sequences or an ``(r, n, q)``
    array); likewise ``w_factors`` with its own rank. Cost is
    ``O(r * r' * n * q)`` and nothing of size ``q**n`` is formed.
    """
    v = [[np.asarray(x, dtype=np.float64) for x in comp] for comp in v_factors]
    w = [[np.asarray(x, dtype=np.float64) for x in comp] for comp in w_factors]
    if not v or not w:
        raise ValueError("factor grids must be non-empty")
    n = len(v[0])
    if any(len(c) != n for c in v) or any(len(c) != n for c in w):
        raise ValueError("both grids must have the same order in every component")
    dims = [x.shape for x in v[0]]
    for comp in v + w:
        if [x.shape for x in comp] != dims:
            raise ValueError("per-position factor dimensions must match")
    total = 0.0
    for vc in v:
        for wc in w:
            prod = 1.0
            for a, b in zip(vc, wc):
                prod *= float(a @ b)
            total += prod
    return total


def rank1_approx(x, rows: int, cols: int, iters: int = 100, tol: float = 1e-10, seed: int = 0):
    """Best rank-1 fit of ``x`` viewed as a ``rows x cols`` matrix.

    Power iteration on the top singular pair; returns ``(u, v, residual)``
    where ``residual`` is the squared norm of ``x - kron(u, v)``.
    """
    m = np.asarray(x, dtype=np.float64).reshape(rows, cols)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(cols)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        u = m @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            break
        u /= nu
        v_new = m.T @ u
        new_sigma = np.linalg.norm(v_new)
        v = v_new / new_sigma
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1.0):
            sigma = new_sigma
            break
        sigma = new_sigma
    u = m @ v
    residual = float(np.sum((m - np.outer(u, v)) ** 2))
    return u, v, residual
