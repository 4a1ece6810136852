"""Grid, true model, prior ensemble generation and ensemble statistics.

Fields are plain 1-D ``numpy`` arrays holding one diffusion coefficient per
cell. A :class:`PriorDataset` bundles an ensemble of such fields with its
empirical mean and covariance, which seed the PCA basis.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_count, check_interval, check_positive, check_vector
from .exceptions import InvalidArgument

# Diagonal jitter for the Cholesky factor of the unit-amplitude kernel.
CHOLESKY_JITTER = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D cell-centred grid on ``[0, length]``."""

    n_cells: int = 100
    length: float = np.pi

    def __post_init__(self):
        check_count(self.n_cells, "n_cells", minimum=2)
        check_positive(self.length, "length")

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    def to_dict(self):
        return {"n_cells": self.n_cells, "length": self.length}


@dataclass(frozen=True)
class PerturbConfig:
    amplitude: float = 0.3
    correlation_length: float = 0.25  # fraction of the domain length
    seed: int = 0

    def __post_init__(self):
        check_positive(self.amplitude, "amplitude", strict=False)
        check_interval(self.correlation_length, "correlation_length", 0.0, 1.0, closed_high=True)
        check_count(self.seed, "seed", minimum=0)


@dataclass(frozen=True)
class PriorDataset:
    grid: Grid
    realizations: np.ndarray  # (n_real, n_cells)
    mean: np.ndarray = field(repr=False)
    covariance: np.ndarray = field(repr=False)
    perturb_config: PerturbConfig | None = None

    @classmethod
    def from_realizations(cls, grid, realizations, perturb_config=None):
        realizations = np.asarray(realizations, dtype=float)
        mean, cov = dataset_statistics(realizations)
        if realizations.shape[1] != grid.n_cells:
            raise InvalidArgument(
                f"realizations have {realizations.shape[1]} cells, grid has {grid.n_cells}"
            )
        return cls(grid, realizations, mean, cov, perturb_config)

    @property
    def n_realizations(self) -> int:
        return self.realizations.shape[0]

    def to_json(self, path):
        cfg = self.perturb_config
        payload = {
            "grid": self.grid.to_dict(),
            "realizations": self.realizations.tolist(),
            "seed": None if cfg is None else cfg.seed,
            "perturb_config": None if cfg is None else asdict(cfg),
        }
        Path(path).write_text(json.dumps(payload) + "\n")

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgument(
                f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
        try:
            grid = Grid(**payload["grid"])
            realizations = np.asarray(payload["realizations"], dtype=float)
            cfg = payload.get("perturb_config")
            cfg = PerturbConfig(**cfg) if cfg else None
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgument(f"{path}: invalid dataset file ({exc!r})") from exc
        if realizations.ndim != 2:
            raise InvalidArgument(f"{path}: 'realizations' must be a list of equal-length lists")
        return cls.from_realizations(grid, realizations, cfg)


def true_model(grid: Grid) -> np.ndarray:
    """Reference diffusion coefficient ``3.5 - 1.6 sin x + 0.1 cos sqrt(300 x)``."""
    x = grid.cell_centers
    return 3.5 - 1.6 * np.sin(x) + 0.1 * np.cos(np.sqrt(300.0 * x))


def squared_exponential_kernel(grid: Grid, correlation_length: float) -> np.ndarray:
    """Unit-variance squared-exponential covariance between cell centres."""
    x = grid.cell_centers
    ell = correlation_length * grid.length
    r = x[:, None] - x[None, :]
    return np.exp(-0.5 * (r / ell) ** 2)


def generate_prior(base, n_real: int, cfg: PerturbConfig, grid: Grid | None = None) -> PriorDataset:
    """Ensemble of ``base`` plus smooth zero-mean Gaussian perturbations.

    Perturbations have covariance ``amplitude**2 * exp(-r**2 / (2 ell**2))``
    with ``ell = correlation_length * grid.length`` and are drawn through a
    Cholesky factor, so a fixed ``cfg.seed`` gives bitwise-identical output.
    """
    base = check_vector(base, "base")
    if grid is None:
        grid = Grid(n_cells=base.size)
    elif grid.n_cells != base.size:
        raise InvalidArgument(f"base has {base.size} cells, grid has {grid.n_cells}")
    if isinstance(n_real, bool) or not isinstance(n_real, (int, np.integer)) or n_real < 2:
        raise InvalidArgument(f"n_real must be an integer >= 2, got {n_real!r}")

    kernel = squared_exponential_kernel(grid, cfg.correlation_length)
    chol = np.linalg.cholesky(kernel + CHOLESKY_JITTER * np.eye(grid.n_cells))
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((int(n_real), grid.n_cells))
    realizations = base[None, :] + cfg.amplitude * (z @ chol.T)
    return PriorDataset.from_realizations(grid, realizations, cfg)


def add_low_frequency_noise(field, noise_amplitude, noise_wavenumber, seed, grid: Grid | None = None):
    """Add a random-phase mix of the lowest Fourier modes on ``[0, L]``.

    Modes ``k = 1..noise_wavenumber`` (period ``L / k``) get standard-normal
    weights and uniform phases; the sum is rescaled so its maximum absolute
    value equals ``noise_amplitude``.
    """
    field = check_vector(field, "field")
    noise_wavenumber = check_count(noise_wavenumber, "noise_wavenumber", minimum=1)
    if grid is None:
        grid = Grid(n_cells=field.size)
    if noise_amplitude == 0:
        return field.copy()

    rng = np.random.default_rng(seed)
    weights = rng.standard_normal(noise_wavenumber)
    phases = rng.uniform(0.0, 2.0 * np.pi, noise_wavenumber)
    k = np.arange(1, noise_wavenumber + 1)
    x = grid.cell_centers
    noise = (weights[:, None] * np.cos(2.0 * np.pi * k[:, None] * x[None, :] / grid.length
                                       + phases[:, None])).sum(axis=0)
    peak = np.max(np.abs(noise))
    if peak == 0:
        return field.copy()
    return field + noise_amplitude * noise / peak


def dataset_statistics(realizations):
    """Per-cell mean and unbiased (divisor ``n - 1``) sample covariance."""
    try:
        X = np.asarray(realizations, dtype=float)
    except ValueError as exc:
        raise InvalidArgument(f"realizations must have equal lengths ({exc})") from exc
    if X.ndim != 2:
        raise InvalidArgument("realizations must be a 2-D array (n_real, n_cells)")
    if X.shape[0] < 2:
        raise InvalidArgument("at least two realizations are needed for a covariance")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("realizations contain non-finite values")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def write_field_csv(path, values, header="value"):
    values = np.asarray(values, dtype=float)
    lines = [header] + [repr(float(v)) for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path):
    lines = Path(path).read_text().splitlines()
    try:
        return np.array([float(s) for s in lines[1:] if s.strip()])
    except ValueError as exc:
        raise InvalidArgument(f"{path}: {exc}") from exc
