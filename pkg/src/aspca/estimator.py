"""scikit-learn style front end for PCA / AS-PCA history matching."""
from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .adjoint import HistoryMatchingProblem
from .exceptions import InvalidArgument
from .optimize import AdaptPolicy, CGConfig, LineSearchConfig, adaptive_minimize, full_model_minimize
from .pca import KLExpansion

METHODS = ("full", "pca", "rotation", "swap", "extension")


class ASPCAHistoryMatcher(BaseEstimator):
    """Fit a diffusion model to observations through an adaptive PCA basis.

    ``fit(X, problem=...)`` takes prior realizations ``X`` of shape
    ``(n_real, n_cells)`` and a :class:`~aspca.adjoint.HistoryMatchingProblem`.
    ``method="full"`` optimizes every cell directly from the prior mean,
    ``"pca"`` keeps the initial basis, and ``"rotation"``, ``"swap"`` and
    ``"extension"`` adapt it whenever CG stalls.

    After fitting, ``model_`` holds the estimated field, ``run_`` the
    :class:`~aspca.optimize.OptimizationRun` and ``kl_`` a
    :class:`~aspca.pca.KLExpansion` carrying the final basis (not set for
    ``"full"``).
    """

    def __init__(self, method="rotation", energy=0.95, n_components=None, max_components=15,
                 max_iters=200, grad_tol=1e-8, beta_formula="polak-ribiere-plus",
                 restart_period=50, initial_step=1.0, stall_window=10,
                 stall_rel_decrease=1e-3, max_adaptations=5, epsilon=0.1, n_add=2,
                 n_swap=2, alpha_mode="product", reorthonormalize=True, reexpress="auto"):
        self.method = method
        self.energy = energy
        self.n_components = n_components
        self.max_components = max_components
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.beta_formula = beta_formula
        self.restart_period = restart_period
        self.initial_step = initial_step
        self.stall_window = stall_window
        self.stall_rel_decrease = stall_rel_decrease
        self.max_adaptations = max_adaptations
        self.epsilon = epsilon
        self.n_add = n_add
        self.n_swap = n_swap
        self.alpha_mode = alpha_mode
        self.reorthonormalize = reorthonormalize
        self.reexpress = reexpress

    def _cg_config(self):
        return CGConfig(max_iters=self.max_iters, grad_tol=self.grad_tol,
                        beta_formula=self.beta_formula, restart_period=self.restart_period,
                        linesearch=LineSearchConfig(initial_step=self.initial_step))

    def _policy(self):
        return AdaptPolicy(
            strategy=self.method if self.method in ("rotation", "swap", "extension") else "none",
            stall_window=self.stall_window, stall_rel_decrease=self.stall_rel_decrease,
            max_adaptations=self.max_adaptations, epsilon=self.epsilon, n_add=self.n_add,
            n_swap=self.n_swap, alpha_mode=self.alpha_mode,
            reorthonormalize=self.reorthonormalize, reexpress=self.reexpress,
        )

    def fit(self, X, y=None, problem: HistoryMatchingProblem | None = None):
        if problem is None:
            raise InvalidArgument("fit needs a HistoryMatchingProblem via problem=...")
        if self.method not in METHODS:
            raise InvalidArgument(f"method must be one of {METHODS}, got {self.method!r}")
        X = check_matrix(X, "X")
        if X.shape[1] != problem.grid.n_cells:
            raise InvalidArgument(f"X has {X.shape[1]} cells, problem grid has {problem.grid.n_cells}")
        cg = self._cg_config()
        policy = self._policy()  # validates parameters for every method
        self.n_features_in_ = X.shape[1]

        kl = KLExpansion(energy=self.energy, n_components=self.n_components,
                         max_components=self.max_components).fit(X)
        if self.method == "full":
            self.run_ = full_model_minimize(problem, kl.mean_.copy(), cg)
            self.kl_ = None
        else:
            self.run_ = adaptive_minimize(problem, kl.basis_, None, cg, policy)
            self.kl_ = kl.with_basis(self.run_.final_basis)
        self.initial_basis_ = kl.basis_
        self.model_ = self.run_.final_model
        return self

    @property
    def objective_(self):
        check_is_fitted(self, "run_")
        return self.run_.final_objective
