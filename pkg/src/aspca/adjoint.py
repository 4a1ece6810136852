"""Least-squares objective, discrete adjoint gradient and a finite-difference oracle.

The adjoint is derived from the Lagrangian

    S(m) + sum_n lam[n+1]^T g_n(u[n+1], u[n], m)

with ``g_n`` the implicit step residual of :mod:`aspca.forward`. Setting its
derivative with respect to each state ``u[n]`` to zero gives, for
``n = N, ..., 1``,

    J_next(n-1)^T lam[n] = -(dL/du[n] + J_prev(n)^T lam[n+1]),  lam[N+1] = 0

and ``dS/dm = dL/dm + sum_n J_d(n)^T lam[n+1]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from ._validation import check_interval, check_positive, check_vector
from .dataset import Grid
from .exceptions import InvalidArgument, InvalidState, SolverFailure
from .forward import SimConfig, Trajectory, banded_rmatvec, jacobian_bands, simulate, transpose_bands


@dataclass(frozen=True)
class Observations:
    times: np.ndarray  # state indices, 0..n_steps
    locations: np.ndarray  # cell indices
    values: np.ndarray  # (len(times), len(locations))
    noise_std: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=int).ravel())
        object.__setattr__(self, "locations", np.asarray(self.locations, dtype=int).ravel())
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        check_positive(self.noise_std, "noise_std")
        if values.shape != (self.times.size, self.locations.size):
            raise InvalidArgument(
                f"values shape {values.shape} does not match "
                f"({self.times.size} times, {self.locations.size} locations)"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("observation values must be finite")

    def check_bounds(self, n_steps, n_cells):
        if self.times.size and (self.times.min() < 0 or self.times.max() > n_steps):
            raise InvalidArgument(f"observation times must lie in [0, {n_steps}]")
        if self.locations.size and (self.locations.min() < 0 or self.locations.max() >= n_cells):
            raise InvalidArgument(f"observation locations must lie in [0, {n_cells - 1}]")

    @classmethod
    def from_trajectory(cls, traj: Trajectory, times, locations=None, noise_std=0.01,
                        added_noise=0.0, seed=None):
        """Sample a trajectory, optionally adding seeded Gaussian noise."""
        times = np.asarray(times, dtype=int)
        if locations is None:
            locations = np.arange(traj.states.shape[1])
        locations = np.asarray(locations, dtype=int)
        values = traj.states[np.ix_(times, locations)].copy()
        if added_noise > 0:
            values += added_noise * np.random.default_rng(seed).standard_normal(values.shape)
        return cls(times, locations, values, noise_std)

    def to_json(self, path):
        payload = {
            "times": self.times.tolist(),
            "locations": self.locations.tolist(),
            "values": self.values.tolist(),
            "noise_std": self.noise_std,
        }
        Path(path).write_text(json.dumps(payload) + "\n")

    @classmethod
    def from_json(cls, path):
        try:
            payload = json.loads(Path(path).read_text())
            return cls(payload["times"], payload["locations"], payload["values"],
                       payload["noise_std"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgument(f"{path}: invalid observations file ({exc!r})") from exc


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights of the regularized objective.

    ``prior_cov_inv`` overrides the scaled identity ``prior_cov_inv_scale * I``
    when given.
    """

    beta: float = 1.0
    m_prior: np.ndarray | None = None
    prior_cov_inv_scale: float = 1.0
    prior_cov_inv: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        check_interval(self.beta, "beta", 0.0, 1.0, closed_low=True, closed_high=True)
        check_positive(self.prior_cov_inv_scale, "prior_cov_inv_scale")
        if self.beta < 1.0 and self.m_prior is None:
            raise InvalidArgument("m_prior is required when beta < 1")

    def prior_apply(self, v):
        if self.prior_cov_inv is not None:
            return self.prior_cov_inv @ v
        return self.prior_cov_inv_scale * v


def _residuals(traj: Trajectory, obs: Observations):
    obs.check_bounds(traj.n_steps, traj.states.shape[1])
    return traj.states[np.ix_(obs.times, obs.locations)] - obs.values


def misfit(traj: Trajectory, obs: Observations) -> float:
    r = _residuals(traj, obs)
    return float(np.sum(r ** 2) / obs.noise_std ** 2)


def prior_term(m, cfg: ObjectiveConfig) -> float:
    if cfg.m_prior is None:
        return 0.0
    dm = np.asarray(m, float) - cfg.m_prior
    return float(dm @ cfg.prior_apply(dm))


def regularized_objective(traj: Trajectory, obs: Observations, m, cfg: ObjectiveConfig | None = None) -> float:
    if cfg is None or cfg.beta == 1.0:
        return misfit(traj, obs)
    return cfg.beta * misfit(traj, obs) + (1.0 - cfg.beta) * prior_term(m, cfg)


def adjoint_gradient(d, traj: Trajectory, obs: Observations, cfg: ObjectiveConfig | None = None) -> np.ndarray:
    """dS/dd by one backward sweep over the stored trajectory."""
    d = check_vector(d, "d", size=traj.states.shape[1])
    if not traj.is_converged():
        raise InvalidState("trajectory has unconverged Newton steps")
    beta = 1.0 if cfg is None else cfg.beta
    grad = np.zeros_like(d)

    if beta > 0:
        r = _residuals(traj, obs)
        # dL/du for every state index, scattered from the observation grid
        seed = np.zeros_like(traj.states)
        np.add.at(seed, (obs.times[:, None], obs.locations[None, :]),
                  2.0 * beta * r / obs.noise_std ** 2)

        sim = traj.config
        dx, dt = traj.grid.dx, traj.dt
        bc = (sim.flux_left, sim.flux_right)
        lam_next = np.zeros_like(d)  # lam[n+1]
        for n in range(traj.n_steps, 0, -1):
            rhs = -(seed[n] - lam_next / dt)  # J_prev = -I/dt
            ju, jd = jacobian_bands(traj.states[n], d, dt, dx, *bc)
            lam = solve_banded((1, 1), transpose_bands(ju), rhs)
            grad += banded_rmatvec(jd, lam)
            lam_next = lam

    if beta < 1.0:
        grad += 2.0 * (1.0 - beta) * cfg.prior_apply(d - cfg.m_prior)
    return grad


def fd_gradient(d, grid: Grid, sim_cfg: SimConfig, obs: Observations,
                cfg: ObjectiveConfig | None = None, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``regularized_objective(simulate(d))``."""
    check_positive(h, "h")
    d = check_vector(d, "d", size=grid.n_cells)

    def objective(dd):
        return regularized_objective(simulate(dd, grid, sim_cfg), obs, dd, cfg)

    grad = np.empty_like(d)
    for i in range(d.size):
        e = np.zeros_like(d)
        e[i] = h
        grad[i] = (objective(d + e) - objective(d - e)) / (2.0 * h)
    return grad


class HistoryMatchingProblem:
    """Objective and adjoint gradient of a diffusion model ``d``.

    Counts forward and adjoint solves. Models with any ``d <= d_floor`` or
    whose simulation fails evaluate to ``inf`` (no gradient), so a line
    search can reject them.
    """

    def __init__(self, grid: Grid, sim_cfg: SimConfig, obs: Observations,
                 objective_cfg: ObjectiveConfig | None = None, d_floor: float = 1e-3):
        self.grid = grid
        self.sim_cfg = sim_cfg
        self.obs = obs
        self.objective_cfg = objective_cfg
        self.d_floor = d_floor
        obs.check_bounds(sim_cfg.n_steps, grid.n_cells)
        self.n_forward = 0
        self.n_adjoint = 0

    def objective(self, d) -> float:
        d = np.asarray(d, dtype=float)
        if not np.all(np.isfinite(d)) or np.any(d <= self.d_floor):
            return np.inf
        self.n_forward += 1
        try:
            traj = simulate(d, self.grid, self.sim_cfg)
        except SolverFailure:
            return np.inf
        return regularized_objective(traj, self.obs, d, self.objective_cfg)

    def objective_and_gradient(self, d):
        d = np.asarray(d, dtype=float)
        if not np.all(np.isfinite(d)) or np.any(d <= self.d_floor):
            return np.inf, None
        self.n_forward += 1
        try:
            traj = simulate(d, self.grid, self.sim_cfg)
        except SolverFailure:
            return np.inf, None
        value = regularized_objective(traj, self.obs, d, self.objective_cfg)
        self.n_adjoint += 1
        return value, adjoint_gradient(d, traj, self.obs, self.objective_cfg)

    def misfit(self, d) -> float:
        traj = simulate(np.asarray(d, float), self.grid, self.sim_cfg)
        return misfit(traj, self.obs)
