"""Fully implicit finite-volume solver for ``u_t = (D(x) u^2 u_x)_x``.

Face values use the harmonic mean of ``D`` and the arithmetic mean of ``u``;
the boundaries prescribe the gradient ``u_x`` so the boundary flux is
``D u^2 u_x`` evaluated in the adjacent cell. Each implicit Euler step is
solved by Newton-Raphson with a direct tridiagonal solve.

Tridiagonal matrices are passed around in LAPACK band storage, shape
``(3, n)``: row 0 holds the superdiagonal (shifted right by one), row 1 the
diagonal and row 2 the subdiagonal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from ._validation import check_count, check_positive, check_vector
from .dataset import Grid
from .exceptions import InvalidArgument, SolverFailure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    t_end: float = 0.5
    n_steps: int = 50
    u0: float | tuple = 1.0  # uniform value or one value per cell
    flux_left: float = 0.0  # prescribed du/dx at x = 0
    flux_right: float = 0.0  # prescribed du/dx at x = L
    newton_tol: float = 1e-10
    newton_max_iter: int = 25

    def __post_init__(self):
        if np.ndim(self.u0) > 0:
            object.__setattr__(self, "u0", tuple(float(v) for v in np.ravel(self.u0)))
        if not np.all(np.isfinite(self.u0)):
            raise InvalidArgument("u0 must be finite")
        check_positive(self.t_end, "t_end")
        check_count(self.n_steps, "n_steps")
        check_positive(self.newton_tol, "newton_tol")
        check_count(self.newton_max_iter, "newton_max_iter")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (n_steps + 1, n_cells)
    dt: float
    newton_iterations: list
    residual_norms: np.ndarray  # final Newton residual per step
    residual_histories: list = field(repr=False)
    d: np.ndarray = field(repr=False)
    grid: Grid = field(repr=False)
    config: SimConfig = field(repr=False)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    def is_converged(self) -> bool:
        return bool(np.all(self.residual_norms <= self.config.newton_tol))

    def to_csv(self, path):
        n = self.states.shape[1]
        lines = ["step," + ",".join(f"cell{i}" for i in range(n))]
        for k, row in enumerate(self.states):
            lines.append(f"{k}," + ",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


def _face_terms(u, d, dx):
    dl, dr = d[:-1], d[1:]
    dsum = dl + dr
    d_face = 2.0 * dl * dr / dsum
    s = 0.5 * (u[:-1] + u[1:])
    grad = (u[1:] - u[:-1]) / dx
    return d_face, s, grad, dl, dr, dsum


def step_residual(u_next, u_prev, d, dt, dx, flux_left=0.0, flux_right=0.0):
    """Residual of one implicit step, ``(u_next - u_prev)/dt - div F``."""
    d_face, s, grad, *_ = _face_terms(u_next, d, dx)
    flux = d_face * s ** 2 * grad
    res = (u_next - u_prev) / dt
    res[:-1] -= flux / dx
    res[1:] += flux / dx
    res[0] += d[0] * u_next[0] ** 2 * flux_left / dx
    res[-1] -= d[-1] * u_next[-1] ** 2 * flux_right / dx
    return res


def jacobian_bands(u_next, d, dt, dx, flux_left=0.0, flux_right=0.0):
    """Band storage of d(residual)/d(u_next) and d(residual)/d(d)."""
    n = u_next.size
    d_face, s, grad, dl, dr, dsum = _face_terms(u_next, d, dx)

    dF_dul = d_face * (s * grad - s ** 2 / dx)
    dF_dur = d_face * (s * grad + s ** 2 / dx)
    ju = np.zeros((3, n))
    ju[1] = 1.0 / dt
    ju[1, :-1] -= dF_dul / dx
    ju[0, 1:] -= dF_dur / dx
    ju[2, :-1] += dF_dul / dx
    ju[1, 1:] += dF_dur / dx
    ju[1, 0] += 2.0 * d[0] * u_next[0] * flux_left / dx
    ju[1, -1] -= 2.0 * d[-1] * u_next[-1] * flux_right / dx

    base = s ** 2 * grad
    dF_ddl = 2.0 * dr ** 2 / dsum ** 2 * base
    dF_ddr = 2.0 * dl ** 2 / dsum ** 2 * base
    jd = np.zeros((3, n))
    jd[1, :-1] -= dF_ddl / dx
    jd[0, 1:] -= dF_ddr / dx
    jd[2, :-1] += dF_ddl / dx
    jd[1, 1:] += dF_ddr / dx
    jd[1, 0] += u_next[0] ** 2 * flux_left / dx
    jd[1, -1] -= u_next[-1] ** 2 * flux_right / dx
    return ju, jd


def bands_to_dense(ab):
    n = ab.shape[1]
    return np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[2, :-1], -1)


def transpose_bands(ab):
    abt = np.zeros_like(ab)
    abt[1] = ab[1]
    abt[0, 1:] = ab[2, :-1]
    abt[2, :-1] = ab[0, 1:]
    return abt


def banded_rmatvec(ab, v):
    """``A.T @ v`` for a tridiagonal ``A`` in band storage."""
    out = ab[1] * v
    out[1:] += ab[0, 1:] * v[:-1]
    out[:-1] += ab[2, :-1] * v[1:]
    return out


def step_jacobians(u_next, u_prev, d, dt, dx, flux_left=0.0, flux_right=0.0):
    """Dense ``(J_next, J_prev, J_d)`` of :func:`step_residual`."""
    ju, jd = jacobian_bands(np.asarray(u_next, float), np.asarray(d, float), dt, dx,
                            flux_left, flux_right)
    n = ju.shape[1]
    return bands_to_dense(ju), -np.eye(n) / dt, bands_to_dense(jd)


def simulate(d, grid: Grid, cfg: SimConfig) -> Trajectory:
    d = check_vector(d, "d", size=grid.n_cells)
    if np.any(d <= 0):
        raise InvalidArgument("diffusion coefficient must be strictly positive")
    dt, dx = cfg.dt, grid.dx
    bc = (cfg.flux_left, cfg.flux_right)

    states = np.empty((cfg.n_steps + 1, grid.n_cells))
    if np.ndim(cfg.u0) and len(cfg.u0) != grid.n_cells:
        raise InvalidArgument(f"u0 has {len(cfg.u0)} values, grid has {grid.n_cells} cells")
    states[0] = cfg.u0
    iterations, finals, histories = [], np.empty(cfg.n_steps), []
    for n in range(cfg.n_steps):
        u_prev = states[n]
        u = u_prev.copy()
        history = []
        for it in range(cfg.newton_max_iter + 1):
            res = step_residual(u, u_prev, d, dt, dx, *bc)
            norm = float(np.max(np.abs(res)))
            history.append(norm)
            if not np.isfinite(norm):
                raise SolverFailure(n, norm, f"Newton diverged at step {n}")
            if norm <= cfg.newton_tol:
                break
            if it == cfg.newton_max_iter:
                raise SolverFailure(n, norm)
            ju, _ = jacobian_bands(u, d, dt, dx, *bc)
            u = u - solve_banded((1, 1), ju, res)
        states[n + 1] = u
        iterations.append(it)
        finals[n] = norm
        histories.append(history)
    logger.debug("simulate: %d steps, %d Newton iterations", cfg.n_steps, sum(iterations))
    return Trajectory(states, dt, iterations, finals, histories, d.copy(), grid, cfg)
