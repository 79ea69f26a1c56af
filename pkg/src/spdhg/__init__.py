"""Stochastic primal-dual hybrid gradient for graph-guided regularised learning."""

from .data_io import Dataset, load_libsvm, parse_libsvm, split
from .linalg import SparseMatrix, matvec, matvec_transpose, spectral_norm_sq
from .problem import (Box, L2Ball, LinfBall, LossKind, ProblemSpec, build_fusion_matrix,
                      make_problem)
from .solvers import Regime, SolverConfig, gadmm_run, lpdhg_run, spdhg_run

__all__ = [
    "Box", "Dataset", "L2Ball", "LinfBall", "LossKind", "ProblemSpec", "Regime",
    "SolverConfig", "SparseMatrix", "build_fusion_matrix", "gadmm_run", "load_libsvm",
    "lpdhg_run", "make_problem", "matvec", "matvec_transpose", "parse_libsvm",
    "spdhg_run", "spectral_norm_sq", "split",
]

__version__ = "0.1.0"
