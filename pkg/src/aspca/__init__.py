"""Adaptive PCA history matching for a 1-D nonlinear diffusion model."""
from .adjoint import HistoryMatchingProblem, ObjectiveConfig, Observations, adjoint_gradient
from .dataset import Grid, PerturbConfig, PriorDataset, generate_prior, true_model
from .estimator import ASPCAHistoryMatcher
from .exceptions import InvalidArgument, InvalidState, SolverFailure
from .forward import SimConfig, simulate
from .optimize import AdaptPolicy, CGConfig, adaptive_minimize, cg_minimize, full_model_minimize
from .pca import KLExpansion, ReducedBasis, eigendecompose, truncate

__all__ = [
    "ASPCAHistoryMatcher",
    "AdaptPolicy",
    "CGConfig",
    "Grid",
    "HistoryMatchingProblem",
    "InvalidArgument",
    "InvalidState",
    "KLExpansion",
    "ObjectiveConfig",
    "Observations",
    "PerturbConfig",
    "PriorDataset",
    "ReducedBasis",
    "SimConfig",
    "SolverFailure",
    "adaptive_minimize",
    "adjoint_gradient",
    "cg_minimize",
    "eigendecompose",
    "full_model_minimize",
    "generate_prior",
    "simulate",
    "true_model",
    "truncate",
]

__version__ = "0.1.0"
