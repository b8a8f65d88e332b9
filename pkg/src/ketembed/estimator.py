"""scikit-learn estimators wrapping the factored embeddings.

``fit(X)`` compresses a dense ``(d, p)`` embedding matrix; ``transform``
maps word indices to their reconstructed rows, so the fitted estimator is
a drop-in lookup table inside a ``Pipeline``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .shape import FactoredShape
from .training import OptimizerState, fit_dense, retrieval_probe
from .word2ket import new_ket_embedding
from .word2ketxs import new_ketxs


class _FactoredEmbedding(TransformerMixin, BaseEstimator):
    def __init__(
        self,
        order=2,
        rank=1,
        epochs=200,
        learning_rate=1e-2,
        optimizer="adam",
        batch_rows=None,
        layernorm=False,
        random_state=0,
    ):
        self.order = order
        self.rank = rank
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.batch_rows = batch_rows
        self.layernorm = layernorm
        self.random_state = random_state

    def _make_shape(self, d: int, p: int) -> FactoredShape:
        raise NotImplementedError

    def _make_model(self, shape: FactoredShape):
        raise NotImplementedError

    def fit(self, X, y=None):
        """Fit the factors to the rows of ``X`` (one row per word)."""
        X = check_array(X, dtype=np.float64)
        if self.order < 1 or self.rank < 1:
            raise ValueError("order and rank must be >= 1")
        self.shape_ = self._make_shape(X.shape[0], X.shape[1])
        self.model_ = self._make_model(self.shape_)
        opt = OptimizerState(self.optimizer, self.learning_rate)
        self.report_ = fit_dense(
            X, self.model_, opt, epochs=self.epochs, batch_rows=self.batch_rows,
            seed=self.random_state,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Embedding rows for the word indices in ``X`` (any shape of ints).

        Output has shape ``X.shape + (p,)``, flattened to ``(b, p)`` for 1-d
        or column-vector input.
        """
        check_is_fitted(self, "model_")
        idx = np.asarray(X)
        if idx.dtype.kind not in "iu":
            if not np.all(idx == np.round(idx)):
                raise ValueError("transform expects integer word indices")
            idx = idx.astype(np.int64)
        flat = idx.reshape(-1)
        rows = self.model_.gather(flat)
        if idx.ndim == 2 and idx.shape[1] == 1:
            return rows
        return rows.reshape(*idx.shape, self.shape_.p)

    def fit_transform(self, X, y=None, **fit_params):
        """Fit on ``X`` and return the reconstruction of every row."""
        self.fit(X, y)
        return self.reconstruct()

    def reconstruct(self) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.gather(np.arange(self.shape_.d))

    def score(self, X, y=None) -> float:
        """Negative reconstruction MSE on ``X``."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return -float(np.mean((self.reconstruct() - X) ** 2))

    def neighbour_overlap(self, X, k: int = 10) -> float:
        check_is_fitted(self, "model_")
        return retrieval_probe(check_array(X, dtype=np.float64), self.model_, k)

    @property
    def space_saving_rate_(self) -> float:
        check_is_fitted(self, "model_")
        return self.shape_.dense_count / self.model_.num_parameters()


class Word2KetEmbedding(_FactoredEmbedding):
    """Per-word rank-``rank`` order-``order`` tensor embedding (word2ket)."""

    def __init__(
        self,
        order=2,
        rank=1,
        epochs=200,
        learning_rate=1e-2,
        optimizer="adam",
        batch_rows=None,
        layernorm=True,
        norm_placement="node",
        random_state=0,
    ):
        super().__init__(order, rank, epochs, learning_rate, optimizer, batch_rows, layernorm, random_state)
        self.norm_placement = norm_placement

    def _make_shape(self, d, p):
        return FactoredShape.for_ket(d, p, self.order, self.rank)

    def _make_model(self, shape):
        return new_ket_embedding(
            shape, seed=self.random_state, layernorm=self.layernorm, placement=self.norm_placement
        )


class Word2KetXSEmbedding(_FactoredEmbedding):
    """Whole-matrix Kronecker-sum embedding (word2ketXS)."""

    def _make_shape(self, d, p):
        return FactoredShape.for_xs(d, p, self.order, self.rank)

    def _make_model(self, shape):
        return new_ketxs(shape, seed=self.random_state, layernorm=self.layernorm)
