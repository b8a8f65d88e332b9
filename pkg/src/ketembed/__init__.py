"""Compressed word embeddings built from sums of tensor products (word2ket, word2ketXS)."""
from .estimator import Word2KetEmbedding, Word2KetXSEmbedding
from .kron import SizeError, factored_inner, kron_entry, kron_mat, kron_row, kron_vec, simple_tensor_to_dense
from .training import FitReport, OptimizerState, fit_dense, grad_check, retrieval_probe, step
from .shape import FactoredShape, param_count_report, solve_shape, space_saving_rate
from .word2ket import GradientBundle, KetEmbedding, LayerNormParams, gather_batch, gather_word, layer_norm, new_ket_embedding
from .word2ketxs import KetXSOperator, backward_rows, full_dense, gather_rows, new_ketxs

__all__ = [
    "FactoredShape",
    "FitReport",
    "OptimizerState",
    "GradientBundle",
    "KetEmbedding",
    "KetXSOperator",
    "LayerNormParams",
    "SizeError",
    "Word2KetEmbedding",
    "Word2KetXSEmbedding",
    "backward_rows",
    "factored_inner",
    "fit_dense",
    "full_dense",
    "gather_batch",
    "gather_rows",
    "gather_word",
    "grad_check",
    "kron_entry",
    "kron_mat",
    "kron_row",
    "kron_vec",
    "layer_norm",
    "new_ket_embedding",
    "new_ketxs",
    "param_count_report",
    "retrieval_probe",
    "simple_tensor_to_dense",
    "solve_shape",
    "space_saving_rate",
    "step",
]
