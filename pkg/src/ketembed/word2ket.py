"""word2ket: each word's vector is a rank-``r`` sum of order-``n`` tensor products.

Word ``i`` owns ``r * n`` leaf vectors of length ``q``. A rank component is
reconstructed by a balanced binary tree of Kronecker products, optionally
LayerNorm-ed at every internal node, and the components are summed. The
result has ``q**n`` entries of which the first ``p`` are the embedding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .shape import FactoredShape

NORM_PLACEMENTS = ("node", "sum")


class GradientBundle(dict):
    """Gradient arrays keyed like the owning model's ``parameters()``."""

    @classmethod
    def zeros_like(cls, params: dict) -> "GradientBundle":
        return cls({k: np.zeros_like(v) for k, v in params.items()})

    def check_congruent(self, params: dict) -> None:
        if set(self) != set(params):
            raise ValueError(f"gradient keys {sorted(self)} != parameter keys {sorted(params)}")
        for k, v in params.items():
            if self[k].shape != v.shape:
                raise ValueError(f"gradient {k!r} has shape {self[k].shape}, expected {v.shape}")


@dataclass
class LayerNormParams:
    gain: np.ndarray
    bias: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.gain.shape != self.bias.shape or self.gain.ndim != 1:
            raise ValueError("gain and bias must be 1-d arrays of equal length")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def identity(cls, dim: int, epsilon: float = 1e-5) -> "LayerNormParams":
        return cls(np.ones(dim), np.zeros(dim), epsilon)

    @property
    def dim(self) -> int:
        return self.gain.size


def _ln_forward(x: np.ndarray, params: LayerNormParams):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    s = np.sqrt(var + params.epsilon)
    xhat = centered / s
    return params.gain * xhat + params.bias, (xhat, s)


def _ln_backward(dy: np.ndarray, params: LayerNormParams, cache):
    xhat, s = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = np.sum(dy * xhat, axis=axes)
    dbias = np.sum(dy, axis=axes)
    dxhat = dy * params.gain
    dx = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    ) / s
    return dx, dgain, dbias


def layer_norm(x, params: LayerNormParams) -> np.ndarray:
    """``gain * (x - mean) / sqrt(var + eps) + bias`` over the last axis (population variance)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.dim:
        raise ValueError(f"input width {x.shape[-1]} != normalized dim {params.dim}")
    return _ln_forward(x, params)[0]


@dataclass(frozen=True)
class _Node:
    lo: int
    hi: int
    left: int = -1
    right: int = -1
    dim: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


class TensorTree:
    """Balanced bracketing of an order-``n`` tensor product.

    Leaves ``[lo, hi)`` are split with the left child taking ``ceil(m/2)``.
    Nodes are stored in post-order, so children always precede parents and
    the root is last.
    """

    def __init__(self, n: int, q: int):
        if n < 1:
            raise ValueError("order must be >= 1")
        self.n = n
        self.q = q
        self.nodes: list[_Node] = []
        self._build(0, n)

    def _build(self, lo: int, hi: int) -> int:
        m = hi - lo
        if m == 1:
            self.nodes.append(_Node(lo, hi, dim=self.q))
            return len(self.nodes) - 1
        mid = lo + (m + 1) // 2
        left = self._build(lo, mid)
        right = self._build(mid, hi)
        self.nodes.append(_Node(lo, hi, left, right, dim=self.q**m))
        return len(self.nodes) - 1

    @property
    def depth(self) -> int:
        return math.ceil(math.log2(self.n)) if self.n > 1 else 0

    def internal(self) -> list[int]:
        return [i for i, node in enumerate(self.nodes) if not node.is_leaf]

    def internal_dims(self) -> list[int]:
        return [self.nodes[i].dim for i in self.internal()]


def _kron_last(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x[..., :, None] * y[..., None, :]).reshape(*x.shape[:-1], x.shape[-1] * y.shape[-1])


def tree_forward(tree: TensorTree, leaves: np.ndarray, norms, placement: str = "node"):
    """Evaluate the tree for every (row, component) and sum the components.

    ``leaves`` has shape ``(b, r, n, q)``. ``norms`` is empty (no LayerNorm),
    one entry per internal node (``placement="node"``) or a single entry
    applied after the rank sum (``placement="sum"``). Returns the untruncated
    ``(b, q**n)`` output and a cache for :func:`tree_backward`.
    """
    values: list = [None] * len(tree.nodes)
    ln_caches: dict = {}
    per_node = bool(norms) and placement == "node"
    slot = 0
    for idx, node in enumerate(tree.nodes):
        if node.is_leaf:
            values[idx] = leaves[:, :, node.lo, :]
            continue
        z = _kron_last(values[node.left], values[node.right])
        if per_node:
            z, ln_caches[idx] = _ln_forward(z, norms[slot])
            slot += 1
        values[idx] = z
    out = values[-1].sum(axis=1)
    root_cache = None
    if norms and placement == "sum" and tree.n > 1:
        out, root_cache = _ln_forward(out, norms[0])
    return out, (values, ln_caches, root_cache)


def tree_backward(tree: TensorTree, grad_out: np.ndarray, norms, cache, placement: str = "node"):
    """Reverse pass of :func:`tree_forward`.

    Returns ``(dleaves, dnorms)`` with ``dleaves`` shaped like the leaves and
    ``dnorms`` a list of ``(dgain, dbias)`` aligned with ``norms``.
    """
    values, ln_caches, root_cache = cache
    b, r = values[-1].shape[:2]
    dnorms = [None] * len(norms)
    if root_cache is not None:
        grad_out, dg, db = _ln_backward(grad_out, norms[0], root_cache)
        dnorms[0] = (dg, db)
    grads: list = [None] * len(tree.nodes)
    grads[-1] = np.broadcast_to(grad_out[:, None, :], (b, r, grad_out.shape[-1]))
    slot_of = {idx: s for s, idx in enumerate(tree.internal())}
    dleaves = np.zeros((b, r, tree.n, tree.q))
    for idx in range(len(tree.nodes) - 1, -1, -1):
        node = tree.nodes[idx]
        g = grads[idx]
        if node.is_leaf:
            dleaves[:, :, node.lo, :] = g
            continue
        if idx in ln_caches:
            s = slot_of[idx]
            g, dg, db = _ln_backward(g, norms[s], ln_caches[idx])
            dnorms[s] = (dg, db)
        x = values[node.left]
        y = values[node.right]
        g4 = g.reshape(b, r, x.shape[-1], y.shape[-1])
        # adjoint of the Kronecker product: contract against the sibling
        grads[node.left] = np.einsum("brac,brc->bra", g4, y)
        grads[node.right] = np.einsum("brac,bra->brc", g4, x)
    for s, pair in enumerate(dnorms):
        if pair is None:
            dim = norms[s].dim
            dnorms[s] = (np.zeros(dim), np.zeros(dim))
    return dleaves, dnorms


def make_norms(tree: TensorTree, layernorm: bool, placement: str, epsilon: float = 1e-5):
    if placement not in NORM_PLACEMENTS:
        raise ValueError(f"placement must be one of {NORM_PLACEMENTS}, got {placement!r}")
    if not layernorm or tree.n == 1:
        return []
    if placement == "sum":
        return [LayerNormParams.identity(tree.q**tree.n, epsilon)]
    return [LayerNormParams.identity(dim, epsilon) for dim in tree.internal_dims()]


def norm_parameters(norms) -> dict:
    out = {}
    for i, ln in enumerate(norms):
        out[f"ln{i}.gain"] = ln.gain
        out[f"ln{i}.bias"] = ln.bias
    return out


def truncate_pad(upstream: np.ndarray, full_dim: int) -> np.ndarray:
    if upstream.shape[1] == full_dim:
        return upstream
    padded = np.zeros((upstream.shape[0], full_dim))
    padded[:, : upstream.shape[1]] = upstream
    return padded


def check_indices(words, limit: int) -> np.ndarray:
    idx = np.asarray(words, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= limit):
        bad = idx[(idx < 0) | (idx >= limit)][0]
        raise IndexError(f"word index {bad} out of range [0, {limit})")
    return idx


def init_std(n: int, r: int, target: float = 0.1) -> float:
    """Leaf std making a rank-``r`` sum of ``n``-fold products have entry std ``target``."""
    return (target / math.sqrt(r)) ** (1.0 / n)


@dataclass
class KetEmbedding:
    """Per-word rank-``r`` order-``n`` factors, shape ``(d, r, n, q)``."""

    shape: FactoredShape
    factors: np.ndarray
    norms: list = field(default_factory=list)
    placement: str = "node"

    def __post_init__(self):
        s = self.shape
        if not s.is_ket:
            raise ValueError("KetEmbedding needs a word2ket shape (t == 0)")
        self.factors = np.asarray(self.factors, dtype=np.float64)
        if self.factors.shape != (s.d, s.r, s.n, s.q):
            raise ValueError(f"factors shape {self.factors.shape} != {(s.d, s.r, s.n, s.q)}")
        if self.placement not in NORM_PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        self.tree = TensorTree(s.n, s.q)

    @property
    def layernorm(self) -> bool:
        return bool(self.norms)

    @property
    def n_rows(self) -> int:
        return self.shape.d

    def parameters(self) -> dict:
        """Trainable arrays by name. The arrays are live views into the model."""
        return {"factors": self.factors, **norm_parameters(self.norms)}

    def num_parameters(self) -> int:
        return sum(a.size for a in self.parameters().values())

    def gather(self, words) -> np.ndarray:
        return gather_batch(self, words)

    def backward(self, words, upstream) -> GradientBundle:
        return backward_batch(self, words, upstream)


def new_ket_embedding(
    shape: FactoredShape,
    seed: int = 0,
    layernorm: bool = True,
    placement: str = "node",
    epsilon: float = 1e-5,
) -> KetEmbedding:
    rng = np.random.default_rng(seed)
    sigma = init_std(shape.n, shape.r)
    factors = rng.normal(0.0, sigma, size=(shape.d, shape.r, shape.n, shape.q))
    tree = TensorTree(shape.n, shape.q)
    return KetEmbedding(shape, factors, make_norms(tree, layernorm, placement, epsilon), placement)


def gather_batch(e: KetEmbedding, words) -> np.ndarray:
    """Embeddings of ``words`` as a ``(b, p)`` array."""
    idx = check_indices(words, e.shape.d)
    if idx.size == 0:
        return np.zeros((0, e.shape.p))
    out, _ = tree_forward(e.tree, e.factors[idx], e.norms, e.placement)
    return out[:, : e.shape.p]


def gather_word(e: KetEmbedding, word: int) -> np.ndarray:
    return gather_batch(e, [word])[0]


def backward_batch(e: KetEmbedding, words, upstream) -> GradientBundle:
    """Gradients of ``sum(upstream * gather_batch(e, words))``.

    Repeated words accumulate; words not in the batch get zero gradient.
    """
    idx = check_indices(words, e.shape.d)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (idx.size, e.shape.p):
        raise ValueError(f"upstream shape {upstream.shape} != {(idx.size, e.shape.p)}")
    grads = GradientBundle.zeros_like(e.parameters())
    if idx.size == 0:
        return grads
    _, cache = tree_forward(e.tree, e.factors[idx], e.norms, e.placement)
    g = truncate_pad(upstream, e.shape.full_dim)
    dleaves, dnorms = tree_backward(e.tree, g, e.norms, cache, e.placement)
    np.add.at(grads["factors"], idx, dleaves)
    for i, (dg, db) in enumerate(dnorms):
        grads[f"ln{i}.gain"] += dg
        grads[f"ln{i}.bias"] += db
    return grads
