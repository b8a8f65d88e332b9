"""Geometry of a factored embedding and its parameter accounting."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction


def ceil_root(x: int, n: int) -> int:
    """Smallest integer ``q`` with ``q**n >= x``, using integer arithmetic only."""
    if x < 1 or n < 1:
        raise ValueError("ceil_root needs x >= 1 and n >= 1")
    q = max(1, int(round(x ** (1.0 / n))))
    while q**n < x:
        q += 1
    while q > 1 and (q - 1) ** n >= x:
        q -= 1
    return q


@dataclass(frozen=True)
class FactoredShape:
    """Sizes of a compressed ``d x p`` embedding.

    ``q`` is the leaf (column) dimension and ``t`` the leaf row count; ``t``
    is 0 for word2ket, where only embedding columns are factored.
    """

    d: int
    p: int
    n: int
    r: int
    q: int
    t: int = 0

    def __post_init__(self):
        for name in ("d", "p", "n", "r", "q"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.t < 0:
            raise ValueError("t must be >= 0")
        if self.q**self.n < self.p:
            raise ValueError(f"q**n = {self.q ** self.n} < p = {self.p}")
        if self.t and self.t**self.n < self.d:
            raise ValueError(f"t**n = {self.t ** self.n} < d = {self.d}")
        if self.is_ket:
            if self.q < 2:
                raise ValueError("word2ket needs leaf dimension q >= 2")
            if self.q < 4 and self.n > 1:
                warnings.warn(
                    f"leaf dimension q={self.q} < 4 stores about as much as a dense vector",
                    stacklevel=3,
                )

    @property
    def is_ket(self) -> bool:
        return self.t == 0

    @property
    def full_dim(self) -> int:
        """Structural embedding width ``q**n`` (before truncation to ``p``)."""
        return self.q**self.n

    @property
    def full_rows(self) -> int:
        """Structural row count: ``t**n`` for word2ketXS, ``d`` for word2ket."""
        return self.t**self.n if self.t else self.d

    @property
    def param_count(self) -> int:
        """Factor parameters only (LayerNorm excluded)."""
        if self.is_ket:
            return self.d * self.r * self.n * self.q
        return self.r * self.n * self.q * self.t

    @property
    def dense_count(self) -> int:
        return self.d * self.p

    @classmethod
    def for_ket(cls, d: int, p: int, n: int, r: int) -> "FactoredShape":
        return cls(d=d, p=p, n=n, r=r, q=ceil_root(p, n), t=0)

    @classmethod
    def for_xs(cls, d: int, p: int, n: int, r: int) -> "FactoredShape":
        return cls(d=d, p=p, n=n, r=r, q=ceil_root(p, n), t=ceil_root(d, n))


def solve_shape(d: int, p: int, n: int, r: int) -> FactoredShape:
    """word2ketXS geometry with ceiling roots ``q = ceil(p**(1/n))``, ``t = ceil(d**(1/n))``."""
    return FactoredShape.for_xs(d, p, n, r)


def round_half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)).__floor__())


def space_saving_rate(shape: FactoredShape, baseline_dim: int | None = None) -> Fraction:
    """Exact ratio of the regular embedding's size to the compressed size.

    The regular embedding is ``d x baseline_dim``; ``baseline_dim`` defaults
    to ``p``. Published comparisons sometimes pit a wider compressed
    embedding against a narrower regular one, hence the override.
    """
    width = shape.p if baseline_dim is None else baseline_dim
    return Fraction(shape.d * width, shape.param_count)


def param_count_report(
    shape: FactoredShape, with_layernorm: bool = False, baseline_dim: int | None = None
) -> tuple[int, int]:
    """``(parameter count, space saving rate rounded to an integer)``.

    With ``with_layernorm`` the word2ket count also includes the gain and
    bias of every internal tree node.
    """
    count = shape.param_count
    if with_layernorm and shape.n > 1:
        from .word2ket import TensorTree

        count += 2 * sum(TensorTree(shape.n, shape.q).internal_dims())
    width = shape.p if baseline_dim is None else baseline_dim
    return count, round_half_up(Fraction(shape.d * width, count))
