"""Synthetic-case generation, strategy comparison runs and gradient checks.

Everything written here is a function of the config and ``master_seed``.
Sub-seeds are fixed offsets from the master seed (see ``SEED_OFFSETS``) so
each random consumer draws from its own stream.

Output layout under ``output_dir``::

    dataset.json                 prior ensemble (shared by both cases)
    spectrum.csv                 full eigenvalue spectrum
    <case>/truth.csv             true diffusion field
    <case>/truth_trajectory.csv  simulated states of the truth
    <case>/observations.json
    <case>/comparison.csv        one row per method
    <case>/<method>/convergence.csv, final_model.csv, snapshot_XX.csv,
                    events.jsonl, summary.json, timing.txt
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._validation import check_count, check_positive
from .adjoint import HistoryMatchingProblem, ObjectiveConfig, Observations
from .dataset import (
    Grid,
    PerturbConfig,
    PriorDataset,
    add_low_frequency_noise,
    generate_prior,
    read_field_csv,
    true_model,
    write_field_csv,
)
from .exceptions import InvalidArgument, InvalidState
from .forward import SimConfig, simulate
from .optimize import (
    AdaptPolicy,
    CGConfig,
    OptimizationRun,
    adaptive_minimize,
    full_model_minimize,
    reduced_oracle,
)
from .pca import chain_gradient, eigendecompose, project, synthesize, truncate

logger = logging.getLogger(__name__)

CASES = ("clean", "noised")
METHODS = ("full", "pca", "rotation", "swap", "extension")
SEED_OFFSETS = {"prior": 1, "case_noise": 2, "observation_noise": 3}
GRADCHECK_TOL = 1e-4
GRADCHECK_ATOL = 1e-10


@dataclass(frozen=True)
class ObservationConfig:
    times: tuple = (10, 20, 30, 40, 50)  # state indices
    locations: tuple | None = None  # None observes every cell
    noise_std: float = 0.01  # weighting sigma in the misfit
    added_noise: float = 0.0  # std of Gaussian noise added to the data

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(int(t) for t in self.times))
        if self.locations is not None:
            object.__setattr__(self, "locations", tuple(int(i) for i in self.locations))
        check_positive(self.noise_std, "noise_std")
        check_positive(self.added_noise, "added_noise", strict=False)
        if not self.times:
            raise InvalidArgument("observation times must not be empty")


@dataclass(frozen=True)
class DatasetConfig:
    n_realizations: int = 600
    amplitude: float = 0.3
    correlation_length: float = 0.25
    noise_amplitude: float = 0.3  # truth perturbation in the noised case
    noise_wavenumber: int = 3

    def __post_init__(self):
        check_count(self.n_realizations, "n_realizations", minimum=2)
        check_positive(self.noise_amplitude, "noise_amplitude", strict=False)
        check_count(self.noise_wavenumber, "noise_wavenumber")
        PerturbConfig(self.amplitude, self.correlation_length)


@dataclass(frozen=True)
class BasisConfig:
    energy: float | None = 0.95
    n_components: int | None = None
    max_components: int = 15


@dataclass(frozen=True)
class ObjectiveBlock:
    beta: float = 1.0  # 1 means pure misfit; below 1 pulls toward the prior mean
    prior_cov_inv_scale: float = 1.0

    def __post_init__(self):
        ObjectiveConfig(beta=self.beta, m_prior=np.zeros(1), prior_cov_inv_scale=self.prior_cov_inv_scale)


def _experiment_sim():
    # outflow at x = 0 keeps u bounded and makes the data sensitive to D everywhere
    return SimConfig(t_end=1.0, n_steps=50, u0=1.0, flux_left=1.0, flux_right=0.0)


_BLOCKS = {
    "grid": Grid,
    "sim": SimConfig,
    "observation": ObservationConfig,
    "dataset": DatasetConfig,
    "basis": BasisConfig,
    "cg": CGConfig,
    "policy": AdaptPolicy,
    "objective": ObjectiveBlock,
}


@dataclass(frozen=True)
class ExperimentConfig:
    grid: Grid = field(default_factory=Grid)
    sim: SimConfig = field(default_factory=_experiment_sim)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    cg: CGConfig = field(default_factory=CGConfig)
    policy: AdaptPolicy = field(default_factory=AdaptPolicy)  # strategy is set per method
    objective: ObjectiveBlock = field(default_factory=ObjectiveBlock)
    case: str = "clean"
    strategies: tuple = METHODS
    output_dir: str = "out"
    master_seed: int = 0
    d_floor: float = 1e-3

    def __post_init__(self):
        if self.case not in CASES:
            raise InvalidArgument(f"case must be one of {CASES}, got {self.case!r}")
        strategies = tuple(self.strategies)
        unknown = [s for s in strategies if s not in METHODS]
        if unknown or not strategies:
            raise InvalidArgument(f"strategies must be a non-empty subset of {METHODS}, got {list(strategies)}")
        object.__setattr__(self, "strategies", strategies)
        check_count(self.master_seed, "master_seed", minimum=0)
        check_positive(self.d_floor, "d_floor", strict=False)
        if max(self.observation.times) > self.sim.n_steps or min(self.observation.times) < 0:
            raise InvalidArgument(f"observation times must lie in [0, {self.sim.n_steps}]")
        locs = self.observation.locations
        if locs is not None and (min(locs) < 0 or max(locs) >= self.grid.n_cells):
            raise InvalidArgument(f"observation locations must lie in [0, {self.grid.n_cells - 1}]")

    @classmethod
    def from_dict(cls, payload: dict) -> ExperimentConfig:
        if not isinstance(payload, dict):
            raise InvalidArgument("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = sorted(set(payload) - known)
        if extra:
            raise InvalidArgument(f"unknown config keys: {extra}")
        kwargs = {}
        for key, value in payload.items():
            if key in _BLOCKS:
                if not isinstance(value, dict):
                    raise InvalidArgument(f"config block {key!r} must be an object")
                try:
                    kwargs[key] = _BLOCKS[key](**value)
                except TypeError as exc:
                    raise InvalidArgument(f"config block {key!r}: {exc}") from exc
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgument(
                f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
        return cls.from_dict(payload)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in _BLOCKS:
                value = asdict(value)
                for k, v in value.items():
                    if isinstance(v, tuple):
                        value[k] = list(v)
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    def with_overrides(self, **overrides) -> ExperimentConfig:
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides) if overrides else self

    def seed(self, consumer: str) -> int:
        return self.master_seed + SEED_OFFSETS[consumer]

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def case_dir(self, case: str | None = None) -> Path:
        return self.out / (case or self.case)


# ---------------------------------------------------------------- generation

def build_truth(config: ExperimentConfig, case: str | None = None) -> np.ndarray:
    case = case or config.case
    base = true_model(config.grid)
    if case == "clean":
        return base
    ds = config.dataset
    return add_low_frequency_noise(base, ds.noise_amplitude, ds.noise_wavenumber,
                                   config.seed("case_noise"), config.grid)


def build_prior(config: ExperimentConfig) -> PriorDataset:
    ds = config.dataset
    cfg = PerturbConfig(ds.amplitude, ds.correlation_length, config.seed("prior"))
    return generate_prior(true_model(config.grid), ds.n_realizations, cfg, config.grid)


def build_observations(config: ExperimentConfig, truth, noise=True) -> tuple:
    traj = simulate(truth, config.grid, config.sim)
    oc = config.observation
    obs = Observations.from_trajectory(
        traj, oc.times, oc.locations, noise_std=oc.noise_std,
        added_noise=oc.added_noise if noise else 0.0, seed=config.seed("observation_noise"),
    )
    return traj, obs


def cmd_generate(config: ExperimentConfig) -> dict:
    """Write the prior dataset, truth field, truth trajectory and observations."""
    case_dir = config.case_dir()
    case_dir.mkdir(parents=True, exist_ok=True)
    prior = build_prior(config)
    prior.to_json(config.out / "dataset.json")
    truth = build_truth(config)
    write_field_csv(case_dir / "truth.csv", truth, header="d")
    traj, obs = build_observations(config, truth)
    traj.to_csv(case_dir / "truth_trajectory.csv")
    obs.to_json(case_dir / "observations.json")
    logger.info("generated %s case in %s", config.case, case_dir)
    return {"dataset": config.out / "dataset.json", "truth": case_dir / "truth.csv",
            "trajectory": case_dir / "truth_trajectory.csv", "observations": case_dir / "observations.json"}


# ------------------------------------------------------------------ spectrum

def spectrum_table(prior: PriorDataset) -> np.ndarray:
    """Rows of (index, eigenvalue, energy fraction, cumulative energy)."""
    full = eigendecompose(prior.covariance, prior.mean)
    frac = full.energy_fractions
    idx = np.arange(1, frac.size + 1)
    return np.column_stack([idx, full.eigenvalues, frac, np.cumsum(frac)])


def cmd_spectrum(dataset_path, out_path) -> np.ndarray:
    table = spectrum_table(PriorDataset.from_json(dataset_path))
    lines = ["index,eigenvalue,energy_fraction,cumulative_energy"]
    for row in table:
        lines.append(f"{int(row[0])}," + ",".join(repr(float(v)) for v in row[1:]))
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text("\n".join(lines) + "\n")
    return table


# ----------------------------------------------------------------------- run

def make_problem(config: ExperimentConfig, obs: Observations, prior: PriorDataset) -> HistoryMatchingProblem:
    ob = config.objective
    obj = None
    if ob.beta < 1.0:
        obj = ObjectiveConfig(beta=ob.beta, m_prior=prior.mean, prior_cov_inv_scale=ob.prior_cov_inv_scale)
    return HistoryMatchingProblem(config.grid, config.sim, obs, obj, d_floor=config.d_floor)


def reduced_basis(config: ExperimentConfig, prior: PriorDataset):
    b = config.basis
    full = eigendecompose(prior.covariance, prior.mean)
    energy = None if b.n_components is not None else b.energy
    return truncate(full, energy=energy, n_components=b.n_components, max_components=b.max_components)


def run_method(method: str, config: ExperimentConfig, problem: HistoryMatchingProblem,
               prior: PriorDataset) -> OptimizationRun:
    if method not in METHODS:
        raise InvalidArgument(f"unknown method {method!r}")
    if method == "full":
        return full_model_minimize(problem, prior.mean.copy(), config.cg)
    policy = replace(config.policy, strategy="none" if method == "pca" else method)
    return adaptive_minimize(problem, reduced_basis(config, prior), None, config.cg, policy)


def relative_distance(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b)))


def pairwise_distances(snapshots) -> list:
    return [relative_distance(snapshots[i], snapshots[j])
            for i in range(len(snapshots)) for j in range(i)]


def rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def _write_convergence(path, run: OptimizationRun):
    lines = ["iteration,objective,grad_norm,n_forward,n_adjoint,adaptation_id"]
    for r in run.iterates:
        lines.append(f"{r.iteration},{r.objective!r},{r.grad_norm!r},{r.n_forward},{r.n_adjoint},{r.adaptation_id}")
    Path(path).write_text("\n".join(lines) + "\n")


def _write_run(run_dir: Path, method, config, problem, run: OptimizationRun | None, truth, error=None):
    run_dir.mkdir(parents=True, exist_ok=True)
    for stale in run_dir.glob("snapshot_*.csv"):
        stale.unlink()
    summary = {"method": method, "case": config.case, "master_seed": config.master_seed}
    if run is None:
        Path(run_dir / "convergence.csv").write_text(
            "iteration,objective,grad_norm,n_forward,n_adjoint,adaptation_id\n")
        (run_dir / "events.jsonl").write_text("")
        summary.update(status="error", error=error, n_forward=problem.n_forward, n_adjoint=problem.n_adjoint)
    else:
        _write_convergence(run_dir / "convergence.csv", run)
        with open(run_dir / "events.jsonl", "w") as fh:
            for ev in run.adaptation_events:
                fh.write(json.dumps(ev.to_dict()) + "\n")
        model = run.final_model
        write_field_csv(run_dir / "final_model.csv", model, header="d")
        for k, snap in enumerate(run.snapshots):
            write_field_csv(run_dir / f"snapshot_{k:02d}.csv", snap, header="d")
        dists = pairwise_distances(run.snapshots)
        summary.update(
            status=run.status,
            initial_objective=run.iterates[0].objective if run.iterates else None,
            final_objective=run.final_objective,
            final_misfit=problem.misfit(model),
            n_iterations=run.iterates[-1].iteration if run.iterates else 0,
            n_forward=problem.n_forward,
            n_adjoint=problem.n_adjoint,
            n_adaptations=len(run.adaptation_events),
            n_snapshots=len(run.snapshots),
            snapshot_max_distance=max(dists, default=0.0),
            truth_rmse=rmse(model, truth),
        )
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def _load_inputs(config: ExperimentConfig):
    case_dir = config.case_dir()
    paths = [config.out / "dataset.json", case_dir / "truth.csv", case_dir / "observations.json"]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise InvalidState(f"missing generated inputs {missing}; run 'generate' first")
    prior = PriorDataset.from_json(paths[0])
    if prior.grid != config.grid:
        raise InvalidArgument(f"dataset grid {prior.grid} does not match config grid {config.grid}")
    return prior, read_field_csv(paths[1]), Observations.from_json(paths[2])


def cmd_run(config: ExperimentConfig) -> dict:
    """Run every requested method; returns ``{method: summary}``.

    Optimizer or solver failures are recorded in the method's summary and
    do not abort the other methods.
    """
    prior, truth, obs = _load_inputs(config)
    summaries = {}
    for method in config.strategies:
        problem = make_problem(config, obs, prior)
        t0 = time.perf_counter()
        try:
            run, error = run_method(method, config, problem, prior), None
        except (InvalidState, ArithmeticError, np.linalg.LinAlgError) as exc:
            run, error = None, f"{type(exc).__name__}: {exc}"
            logger.error("%s failed: %s", method, error)
        elapsed = time.perf_counter() - t0
        run_dir = config.case_dir() / method
        summaries[method] = _write_run(run_dir, method, config, problem, run, truth, error)
        # kept out of summary.json so that file stays byte-reproducible
        (run_dir / "timing.txt").write_text(f"wall_time_s={elapsed:.3f}\n")
        logger.info("%s: status=%s objective=%s (%.1f s)", method, summaries[method]["status"],
                    summaries[method].get("final_objective"), elapsed)
    _write_comparison(config.case_dir() / "comparison.csv", summaries)
    return summaries


def _write_comparison(path, summaries):
    cols = ["method", "status", "final_objective", "final_misfit", "n_iterations", "n_forward",
            "n_adjoint", "n_adaptations", "snapshot_max_distance", "truth_rmse"]
    lines = [",".join(cols)]
    for s in summaries.values():
        lines.append(",".join("" if s.get(c) is None else repr(s[c]) if isinstance(s[c], float) else str(s[c])
                              for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------- gradcheck

def _relative_error(g, fd, atol):
    # a vanishing adjoint gradient passes outright; FD keeps an O(h^2) residue there
    if np.linalg.norm(g) <= atol:
        return 0.0
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd)))


def cmd_gradcheck(config: ExperimentConfig, matched=False, h=1e-6) -> dict:
    """Compare adjoint gradients in model and latent space against central FD.

    The check is done at the prior mean. With ``matched=True`` it is done at
    the truth with noise-free data, where both adjoint gradients vanish;
    errors are then reported as zero once a gradient norm is below
    ``GRADCHECK_ATOL``.
    """
    prior = build_prior(config)
    truth = build_truth(config)
    _, obs = build_observations(config, truth, noise=not matched)
    problem = make_problem(config, obs, prior)
    basis = reduced_basis(config, prior)
    m = truth if matched else prior.mean
    xi = np.zeros(basis.n_components) if not matched else None

    f, g = problem.objective_and_gradient(m)
    if g is None:
        raise InvalidState("forward solve failed at the check point")
    fd = np.empty_like(m)
    for i in range(m.size):
        e = np.zeros_like(m)
        e[i] = h
        fd[i] = (problem.objective(m + e) - problem.objective(m - e)) / (2 * h)

    if matched:
        # express the truth through the basis mean plus its out-of-span part
        xi = project(basis, m)
        basis = replace(basis, mean=basis.mean + (m - synthesize(basis, xi)))
    _, g_xi = reduced_oracle(problem, basis)(xi)
    fd_xi = np.empty_like(xi)
    for i in range(xi.size):
        e = np.zeros_like(xi)
        e[i] = h
        fd_xi[i] = (problem.objective(synthesize(basis, xi + e))
                    - problem.objective(synthesize(basis, xi - e))) / (2 * h)

    atol = GRADCHECK_ATOL if matched else 0.0
    report = {
        "point": "truth" if matched else "prior_mean",
        "objective": f,
        "grad_m_norm": float(np.linalg.norm(g)),
        "grad_xi_norm": float(np.linalg.norm(g_xi)),
        "fd_m_norm": float(np.linalg.norm(fd)),
        "fd_xi_norm": float(np.linalg.norm(fd_xi)),
        "error_m": _relative_error(g, fd, atol),
        "error_xi": _relative_error(g_xi, fd_xi, atol),
        "chain_consistency": _relative_error(g_xi, chain_gradient(basis, g), 0.0),
        "tolerance": GRADCHECK_TOL,
    }
    report["passed"] = max(report["error_m"], report["error_xi"]) <= GRADCHECK_TOL
    return report
