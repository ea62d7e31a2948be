"""Exact top-N item mining by reverse k-MIPS result size."""

from .baseline import ScoreTable, brute_force_scores, brute_force_topn
from .preprocess import Index, IndexConfig, build_index, load_index, save_index
from .query import TopNResult, top_n_query
from .synthetic import gen_synthetic
from .transform import Rotation, apply_rotation, fit_rotation
from .vector_store import ConfigurationError, VectorSet, load_vectors

__all__ = [
    "ConfigurationError", "Index", "IndexConfig", "Rotation", "ScoreTable", "TopNResult",
    "VectorSet", "apply_rotation", "brute_force_scores", "brute_force_topn", "build_index",
    "fit_rotation", "gen_synthetic", "load_index", "load_vectors", "save_index", "top_n_query",
]
