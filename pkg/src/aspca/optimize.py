"""Nonlinear conjugate gradients and the adaptive-basis outer loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ._validation import check_count, check_interval, check_positive
from .adjoint import HistoryMatchingProblem
from .exceptions import InvalidArgument, SolverFailure
from .pca import ReducedBasis, chain_gradient, project, synthesize
from .strategies import (
    AdaptationEvent,
    RotationConfig,
    extension_update,
    rotation_update,
    sensitivity_coefficients,
    swap_update,
)

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERS = "max_iters"
LINESEARCH_FAILED = "linesearch_failed"
STALLED = "stalled"
INVALID_START = "invalid_start"


@dataclass(frozen=True)
class LineSearchConfig:
    c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    initial_step: float = 1.0

    def __post_init__(self):
        check_interval(self.c1, "c1", 0.0, 1.0)
        check_interval(self.backtrack_factor, "backtrack_factor", 0.0, 1.0)
        check_count(self.max_backtracks, "max_backtracks")
        check_positive(self.initial_step, "initial_step")


@dataclass(frozen=True)
class CGConfig:
    max_iters: int = 200
    grad_tol: float = 1e-8
    beta_formula: str = "polak-ribiere-plus"
    restart_period: int = 50
    linesearch: LineSearchConfig = LineSearchConfig()

    def __post_init__(self):
        check_count(self.max_iters, "max_iters")
        check_positive(self.grad_tol, "grad_tol")
        check_count(self.restart_period, "restart_period")
        if self.beta_formula not in ("polak-ribiere-plus", "fletcher-reeves"):
            raise InvalidArgument(f"unknown beta_formula {self.beta_formula!r}")
        if isinstance(self.linesearch, dict):
            object.__setattr__(self, "linesearch", LineSearchConfig(**self.linesearch))


@dataclass(frozen=True)
class AdaptPolicy:
    strategy: str = "none"  # none | rotation | extension | swap
    stall_window: int = 10
    stall_rel_decrease: float = 1e-3
    max_adaptations: int = 5
    epsilon: float = 0.1
    n_add: int = 2
    n_swap: int = 2
    alpha_mode: str = "product"
    reorthonormalize: bool = True
    # "project": drop the part of the model outside the new span;
    # "anchor": keep it as a fixed offset so the model is unchanged;
    # "auto": anchor for rotation, project for swap and extension.
    reexpress: str = "auto"

    def __post_init__(self):
        if self.strategy not in ("none", "rotation", "extension", "swap"):
            raise InvalidArgument(f"unknown strategy {self.strategy!r}")
        if self.reexpress not in ("auto", "project", "anchor"):
            raise InvalidArgument(f"unknown reexpress mode {self.reexpress!r}")
        check_count(self.stall_window, "stall_window")
        check_positive(self.stall_rel_decrease, "stall_rel_decrease")
        check_count(self.max_adaptations, "max_adaptations", minimum=0)

    @property
    def anchored(self):
        if self.reexpress == "auto":
            return self.strategy == "rotation"
        return self.reexpress == "anchor"

    @property
    def rotation_config(self):
        return RotationConfig(epsilon=self.epsilon, alpha_mode=self.alpha_mode,
                              reorthonormalize=self.reorthonormalize)


@dataclass
class IterRecord:
    iteration: int
    objective: float
    grad_norm: float
    n_forward: int = 0
    n_adjoint: int = 0
    adaptation_id: int = 0


@dataclass
class CGResult:
    x: np.ndarray
    f: float
    g: np.ndarray | None
    status: str
    history: list  # IterRecord per accepted point, iteration 0 = start

    @property
    def n_iter(self):
        return self.history[-1].iteration if self.history else 0


@dataclass
class OptimizationRun:
    method: str
    iterates: list = field(default_factory=list)
    adaptation_events: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # model at each adaptation, then the final model
    final_xi: np.ndarray | None = None
    final_model: np.ndarray | None = None
    final_basis: ReducedBasis | None = None
    status: str = ""
    gradient_checks: list = field(default_factory=list)

    @property
    def objectives(self):
        return np.array([r.objective for r in self.iterates])

    @property
    def final_objective(self):
        return self.iterates[-1].objective if self.iterates else np.inf


def _safe_eval(evaluate, x):
    try:
        f, g = evaluate(x)
    except (SolverFailure, FloatingPointError):
        return np.inf, None
    if f is None or not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
        return np.inf, None
    return float(f), np.asarray(g, dtype=float)


def _line_search(evaluate, x, f, g, p, alpha, ls: LineSearchConfig, max_refine=4):
    """Armijo backtracking followed by a few quadratic-fit refinements.

    A refined step replaces the accepted one only if it also satisfies the
    Armijo condition and lowers the objective further.
    """
    slope = float(g @ p)
    for _ in range(ls.max_backtracks + 1):
        f_try, g_try = _safe_eval(evaluate, x + alpha * p)
        # strict decrease: near round-off, c1 * alpha * slope can vanish against f
        if f_try < f and f_try <= f + ls.c1 * alpha * slope:
            break
        alpha *= ls.backtrack_factor
    else:
        return None

    for _ in range(max_refine):
        curv = f_try - f - slope * alpha
        if curv <= 0:
            alpha_q = 10.0 * alpha
        else:
            alpha_q = min(max(-slope * alpha ** 2 / (2.0 * curv), 0.1 * alpha), 10.0 * alpha)
        if abs(alpha_q - alpha) <= 0.05 * alpha:
            break
        f_q, g_q = _safe_eval(evaluate, x + alpha_q * p)
        if not (f_q < f_try and f_q <= f + ls.c1 * alpha_q * slope):
            break
        alpha, f_try, g_try = alpha_q, f_q, g_q
    return alpha, x + alpha * p, f_try, g_try


def cg_minimize(evaluate: Callable, x0, cfg: CGConfig = CGConfig(),
                stop_check: Callable | None = None, counts: Callable | None = None) -> CGResult:
    """Minimize with nonlinear conjugate gradients.

    ``evaluate(x)`` returns ``(f, grad)``; a raised :class:`SolverFailure`
    or a non-finite value marks ``x`` as infeasible. ``stop_check(history)``
    may end the run early with status ``"stalled"``; ``counts()`` returns
    ``(n_forward, n_adjoint)`` for the log.
    """
    x = np.array(x0, dtype=float)
    ls = cfg.linesearch

    def record(k, f, g):
        nf, na = counts() if counts else (0, 0)
        history.append(IterRecord(k, f, float(np.max(np.abs(g))), nf, na))

    history = []
    f, g = _safe_eval(evaluate, x)
    if g is None:
        return CGResult(x, f, None, INVALID_START, history)
    record(0, f, g)
    if np.max(np.abs(g)) <= cfg.grad_tol:
        return CGResult(x, f, g, CONVERGED, history)

    p = -g
    prev_alpha, prev_slope = None, None
    status = MAX_ITERS
    since_restart = 0
    for k in range(1, cfg.max_iters + 1):
        slope = float(g @ p)
        if slope >= 0:
            p, slope = -g, -float(g @ g)
            since_restart = 0
        if prev_alpha is None:
            alpha = ls.initial_step / np.max(np.abs(p))
        else:
            alpha = prev_alpha * prev_slope / slope

        found = _line_search(evaluate, x, f, g, p, alpha, ls)
        if found is None and since_restart > 0:
            p, slope = -g, -float(g @ g)
            since_restart = 0
            found = _line_search(evaluate, x, f, g, p, ls.initial_step / np.max(np.abs(p)), ls)
        if found is None:
            status = LINESEARCH_FAILED
            break

        alpha, x, f, g_new = found
        prev_alpha, prev_slope = alpha, slope
        record(k, f, g_new)
        if np.max(np.abs(g_new)) <= cfg.grad_tol:
            g = g_new
            status = CONVERGED
            break
        if stop_check is not None and stop_check(history):
            g = g_new
            status = STALLED
            break

        since_restart += 1
        if since_restart >= cfg.restart_period:
            beta = 0.0
            since_restart = 0
        elif cfg.beta_formula == "fletcher-reeves":
            beta = float(g_new @ g_new) / float(g @ g)
        else:
            beta = max(0.0, float(g_new @ (g_new - g)) / float(g @ g))
        p = -g_new + beta * p
        g = g_new
    return CGResult(x, f, g, status, history)


def stall_detector(window: int, rel_decrease: float):
    """``stop_check`` that fires when the objective falls by less than
    ``rel_decrease`` (relative) over the last ``window`` accepted steps."""

    def check(history):
        if len(history) <= window:
            return False
        old, new = history[-1 - window].objective, history[-1].objective
        return (old - new) <= rel_decrease * abs(old)

    return check


def reduced_oracle(problem: HistoryMatchingProblem, basis: ReducedBasis):
    def evaluate(xi):
        f, gm = problem.objective_and_gradient(synthesize(basis, xi))
        if gm is None:
            return f, None
        return f, chain_gradient(basis, gm)

    return evaluate


def latent_gradient_error(problem: HistoryMatchingProblem, basis: ReducedBasis, xi, h=1e-6) -> float:
    """Relative l2 error between the chained adjoint gradient and central FD in xi."""
    _, g = reduced_oracle(problem, basis)(xi)
    fd = np.empty_like(g)
    for i in range(xi.size):
        e = np.zeros_like(xi)
        e[i] = h
        fd[i] = (problem.objective(synthesize(basis, xi + e))
                 - problem.objective(synthesize(basis, xi - e))) / (2 * h)
    denom = np.linalg.norm(fd)
    if denom < 1e-10 and np.linalg.norm(g) < 1e-10:
        return 0.0
    return float(np.linalg.norm(g - fd) / denom)


def adapt_basis(basis: ReducedBasis, grad_m, policy: AdaptPolicy, iteration: int):
    coeffs = sensitivity_coefficients(basis, grad_m)
    before = basis.fingerprint()
    if policy.strategy == "rotation":
        new, gamma = rotation_update(basis, coeffs, policy.rotation_config, return_gamma=True)
        event = AdaptationEvent("rotation", iteration, before, new.fingerprint(), gamma=gamma)
    elif policy.strategy == "extension":
        n_add = min(policy.n_add, basis.complement.shape[1])
        new, added = extension_update(basis, coeffs, n_add, return_indices=True)
        event = AdaptationEvent("extension", iteration, before, new.fingerprint(), added=added)
    elif policy.strategy == "swap":
        n_swap = min(policy.n_swap, basis.n_components - 1, basis.complement.shape[1])
        new, pairs = swap_update(basis, coeffs, n_swap, policy.rotation_config, return_pairs=True)
        event = AdaptationEvent("swap", iteration, before, new.fingerprint(), swapped=pairs)
    else:
        raise InvalidArgument(f"cannot adapt with strategy {policy.strategy!r}")
    return new, event


def adaptive_minimize(problem: HistoryMatchingProblem, basis: ReducedBasis, xi0=None,
                      cg_cfg: CGConfig = CGConfig(), policy: AdaptPolicy = AdaptPolicy(),
                      check_gradients=False) -> OptimizationRun:
    """CG in latent space with gradient-driven basis updates on stalls.

    Each stall (while adaptations remain) recomputes dS/dm at the current
    model, adapts the basis, re-expresses the model in the new basis and
    restarts CG. Re-expression projects onto the new span; with anchoring
    (the default for rotation) the lost part is folded into the basis mean
    so the restart point is the stall point. With ``strategy="none"`` this is a plain
    :func:`cg_minimize` run.
    """
    run = OptimizationRun(method="pca" if policy.strategy == "none" else policy.strategy)
    xi = np.zeros(basis.n_components) if xi0 is None else np.asarray(xi0, dtype=float)
    counts = lambda: (problem.n_forward, problem.n_adjoint)  # noqa: E731
    offset = 0
    while True:
        segment = len(run.adaptation_events)
        adaptive = policy.strategy != "none" and segment < policy.max_adaptations
        stop = stall_detector(policy.stall_window, policy.stall_rel_decrease) if adaptive else None
        if check_gradients:
            run.gradient_checks.append(latent_gradient_error(problem, basis, xi))
        res = cg_minimize(reduced_oracle(problem, basis), xi, cg_cfg, stop_check=stop, counts=counts)
        for rec in res.history:
            rec.iteration += offset
            rec.adaptation_id = segment
        run.iterates.extend(res.history)
        offset = run.iterates[-1].iteration if run.iterates else offset
        xi = res.x
        run.status = res.status
        if res.status != STALLED:
            break

        m = synthesize(basis, xi)
        run.snapshots.append(m)
        _, grad_m = problem.objective_and_gradient(m)
        new_basis, event = adapt_basis(basis, grad_m, policy, offset)
        xi = project(new_basis, m)
        residual = m - synthesize(new_basis, xi)
        event.projection_loss = float(np.linalg.norm(residual))
        if policy.anchored:
            new_basis = replace(new_basis, mean=new_basis.mean + residual)
        run.adaptation_events.append(event)
        logger.info("adaptation %d (%s) at iteration %d, projection loss %.3e",
                    segment + 1, policy.strategy, offset, event.projection_loss)
        basis = new_basis

    run.final_xi = xi
    run.final_model = synthesize(basis, xi)
    run.final_basis = basis
    run.snapshots.append(run.final_model)
    return run


def full_model_minimize(problem: HistoryMatchingProblem, m0, cg_cfg: CGConfig = CGConfig()) -> OptimizationRun:
    """CG directly over the cell values, without reduction."""
    run = OptimizationRun(method="full")
    res = cg_minimize(problem.objective_and_gradient, m0, cg_cfg,
                      counts=lambda: (problem.n_forward, problem.n_adjoint))
    run.iterates = res.history
    run.status = res.status
    run.final_model = res.x
    run.snapshots.append(res.x)
    return run
