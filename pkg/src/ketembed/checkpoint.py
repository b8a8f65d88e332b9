"""Binary checkpoint shared by both model kinds.

Layout (all integers little-endian)::

    b"W2KT"            magic
    u16                format version (1)
    u8                 model kind: 1 = word2ket, 2 = word2ketXS
    u8                 scalar width in bytes: 4 or 8
    u64 x 6            d, p, n, r, q, t
    scalars            factor array, row-major; (k, j) lexicographic
                       (word2ket: (d, r, n, q); word2ketXS: (r, n, t, q))
    u64                LayerNorm node count m (0 when disabled)
    m x [u64 dim, gain[dim], bias[dim]]
    u8                 LayerNorm placement: 0 = node, 1 = sum
    f64                LayerNorm epsilon
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .shape import FactoredShape
from .word2ket import KetEmbedding, LayerNormParams
from .word2ketxs import KetXSOperator

MAGIC = b"W2KT"
VERSION = 1
KIND_KET = 1
KIND_XS = 2
_PLACEMENT_CODES = {"node": 0, "sum": 1}


class CheckpointError(ValueError):
    pass


def _dtype(width: int) -> np.dtype:
    if width == 4:
        return np.dtype("<f4")
    if width == 8:
        return np.dtype("<f8")
    raise CheckpointError(f"unsupported scalar width {width}")


def dumps(model, scalar_width: int = 8) -> bytes:
    dt = _dtype(scalar_width)
    s = model.shape
    kind = KIND_KET if isinstance(model, KetEmbedding) else KIND_XS
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HBB", VERSION, kind, scalar_width))
    buf.write(struct.pack("<6Q", s.d, s.p, s.n, s.r, s.q, s.t))
    buf.write(np.ascontiguousarray(model.factors, dtype=dt).tobytes())
    buf.write(struct.pack("<Q", len(model.norms)))
    eps = 1e-5
    for ln in model.norms:
        buf.write(struct.pack("<Q", ln.dim))
        buf.write(ln.gain.astype(dt).tobytes())
        buf.write(ln.bias.astype(dt).tobytes())
        eps = ln.epsilon
    buf.write(struct.pack("<Bd", _PLACEMENT_CODES[model.placement], eps))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int, dt: np.dtype) -> np.ndarray:
        raw = self.take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).astype(np.float64)


def loads(data: bytes):
    """Inverse of :func:`dumps`. Returns ``(model, scalar_width)``."""
    rd = _Reader(data)
    if rd.take(4) != MAGIC:
        raise CheckpointError("not a W2KT checkpoint (bad magic)")
    version, kind, width = rd.unpack("<HBB")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    dt = _dtype(width)
    d, p, n, r, q, t = rd.unpack("<6Q")
    shape = FactoredShape(d=d, p=p, n=n, r=r, q=q, t=t)
    if kind == KIND_KET:
        fshape = (d, r, n, q)
    elif kind == KIND_XS:
        fshape = (r, n, t, q)
    else:
        raise CheckpointError(f"unknown model kind {kind}")
    factors = rd.array(int(np.prod(fshape)), dt).reshape(fshape)
    (count,) = rd.unpack("<Q")
    raw_norms = []
    for _ in range(count):
        (dim,) = rd.unpack("<Q")
        raw_norms.append((rd.array(dim, dt), rd.array(dim, dt)))
    code, eps = rd.unpack("<Bd")
    if rd.pos != len(data):
        raise CheckpointError(f"{len(data) - rd.pos} trailing bytes after checkpoint")
    placement = {v: k for k, v in _PLACEMENT_CODES.items()}.get(code)
    if placement is None:
        raise CheckpointError(f"unknown LayerNorm placement code {code}")
    norms = [LayerNormParams(g, b, eps) for g, b in raw_norms]
    cls = KetEmbedding if kind == KIND_KET else KetXSOperator
    return cls(shape, factors, norms, placement), width


def save(model, path, scalar_width: int = 8) -> None:
    Path(path).write_bytes(dumps(model, scalar_width))


def load(path):
    return loads(Path(path).read_bytes())
