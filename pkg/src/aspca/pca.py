"""Karhunen-Loeve (PCA) parametrization of a random field.

A field is written as ``m = mean + W diag(sqrt(beta)) xi`` where the columns
of ``W`` are the leading covariance eigenvectors and ``beta`` their
eigenvalues, so that ``xi ~ N(0, I)`` reproduces the prior covariance.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_vector
from .dataset import dataset_statistics
from .exceptions import InvalidArgument

SYMMETRY_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-10


@dataclass(frozen=True)
class FullBasis:
    vectors: np.ndarray  # (n, n), eigenvectors in columns
    eigenvalues: np.ndarray  # descending, >= 0
    mean: np.ndarray

    @property
    def energy_fractions(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        if total <= 0:
            raise InvalidArgument("all eigenvalues are zero; no energy to retain")
        return self.eigenvalues / total


@dataclass(frozen=True)
class ReducedBasis:
    retained: np.ndarray  # (n, N)
    retained_eigenvalues: np.ndarray  # (N,)
    complement: np.ndarray  # (n, n - N)
    complement_eigenvalues: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        if self.retained.ndim != 2 or self.retained.shape[1] < 1:
            raise InvalidArgument("a reduced basis needs at least one retained vector")
        if self.retained.shape[1] != self.retained_eigenvalues.shape[0]:
            raise InvalidArgument("retained vectors and eigenvalues disagree in count")
        if self.complement.shape[1] != self.complement_eigenvalues.shape[0]:
            raise InvalidArgument("complement vectors and eigenvalues disagree in count")
        if not np.all(self.retained_eigenvalues > 0):
            raise InvalidArgument("retained eigenvalues must be strictly positive")

    @property
    def n_components(self) -> int:
        return self.retained.shape[1]

    @property
    def n_cells(self) -> int:
        return self.retained.shape[0]

    @property
    def scale(self) -> np.ndarray:
        return np.sqrt(self.retained_eigenvalues)

    def orthonormality_error(self, include_complement=False) -> float:
        """``max |W^T W - I|`` over the retained (optionally full) column set."""
        W = np.hstack([self.retained, self.complement]) if include_complement else self.retained
        return float(np.max(np.abs(W.T @ W - np.eye(W.shape[1]))))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.retained, self.retained_eigenvalues, self.complement_eigenvalues):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def to_json(self, path, include_complement=False):
        payload = {
            "N": self.n_components,
            "mean": self.mean.tolist(),
            "retained": self.retained.T.tolist(),  # one list per column
            "retained_eigenvalues": self.retained_eigenvalues.tolist(),
            "complement_eigenvalues": self.complement_eigenvalues.tolist(),
        }
        if include_complement:
            payload["complement"] = self.complement.T.tolist()
        Path(path).write_text(json.dumps(payload) + "\n")

    @classmethod
    def from_json(cls, path):
        payload = json.loads(Path(path).read_text())
        try:
            retained = np.asarray(payload["retained"], dtype=float).T
            mean = np.asarray(payload["mean"], dtype=float)
            comp_vals = np.asarray(payload["complement_eigenvalues"], dtype=float)
            if "complement" in payload:
                complement = np.asarray(payload["complement"], dtype=float).T
            else:
                complement = np.zeros((mean.size, 0))
                comp_vals = np.zeros(0)
            return cls(retained, np.asarray(payload["retained_eigenvalues"], dtype=float),
                       complement.reshape(mean.size, -1), comp_vals, mean)
        except (KeyError, ValueError) as exc:
            raise InvalidArgument(f"{path}: invalid basis file ({exc!r})") from exc


def _normalize_signs(vectors):
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigendecompose(covariance, mean) -> FullBasis:
    K = check_matrix(covariance, "covariance")
    if K.shape[0] != K.shape[1]:
        raise InvalidArgument(f"covariance must be square, got {K.shape}")
    mean = check_vector(mean, "mean", size=K.shape[0])
    scale = max(np.max(np.abs(K)), np.finfo(float).tiny)
    if np.max(np.abs(K - K.T)) > SYMMETRY_TOL * scale:
        raise InvalidArgument("covariance is not symmetric")

    vals, vecs = np.linalg.eigh(0.5 * (K + K.T))
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    beta_max = max(vals[0], 0.0)
    if np.any(vals < -NEGATIVE_EIG_TOL * max(beta_max, np.finfo(float).tiny)) and beta_max > 0:
        raise InvalidArgument(f"covariance is not positive semidefinite (min eigenvalue {vals[-1]:.3e})")
    vals = np.clip(vals, 0.0, None)
    return FullBasis(_normalize_signs(vecs), vals, mean.copy())


def truncate(basis: FullBasis, energy: float | None = None, n_components: int | None = None,
             max_components: int | None = None) -> ReducedBasis:
    """Split ``basis`` into retained and complement parts.

    Either keep exactly ``n_components`` vectors, or the shortest prefix whose
    cumulative energy reaches ``energy`` (optionally capped at
    ``max_components``).
    """
    fractions = basis.energy_fractions  # raises on all-zero spectrum
    n_total = fractions.size
    if (energy is None) == (n_components is None):
        raise InvalidArgument("give exactly one of energy or n_components")
    if n_components is not None:
        if not 1 <= n_components <= n_total:
            raise InvalidArgument(f"n_components must lie in [1, {n_total}], got {n_components}")
        N = int(n_components)
    else:
        if not 0 < energy <= 1:
            raise InvalidArgument(f"energy threshold must lie in (0, 1], got {energy}")
        cumulative = np.cumsum(fractions)
        N = int(np.searchsorted(cumulative, energy - 1e-12) + 1)
        N = min(N, int(np.count_nonzero(basis.eigenvalues > 0)))
        if max_components is not None:
            N = min(N, int(max_components))
    if basis.eigenvalues[N - 1] <= 0:
        raise InvalidArgument("cannot retain components with zero eigenvalue")
    return ReducedBasis(
        retained=basis.vectors[:, :N].copy(),
        retained_eigenvalues=basis.eigenvalues[:N].copy(),
        complement=basis.vectors[:, N:].copy(),
        complement_eigenvalues=basis.eigenvalues[N:].copy(),
        mean=basis.mean.copy(),
    )


def synthesize(basis: ReducedBasis, xi) -> np.ndarray:
    xi = check_vector(xi, "xi", size=basis.n_components)
    return basis.mean + basis.retained @ (basis.scale * xi)


def project(basis: ReducedBasis, m) -> np.ndarray:
    m = check_vector(m, "m", size=basis.n_cells)
    if np.any(basis.scale <= 0):
        raise InvalidArgument("cannot project onto a component with zero eigenvalue")
    return (basis.retained.T @ (m - basis.mean)) / basis.scale


def chain_gradient(basis: ReducedBasis, grad_m) -> np.ndarray:
    """Gradient in latent coordinates: ``sqrt(beta_i) <W_i, dS/dm>``."""
    grad_m = check_vector(grad_m, "grad_m", size=basis.n_cells)
    return basis.scale * (basis.retained.T @ grad_m)


def truncation_error(basis: ReducedBasis, realizations) -> float:
    """Mean squared residual of centred realizations outside the retained span."""
    X = np.asarray(realizations, dtype=float) - basis.mean
    W = basis.retained
    resid = X - (X @ W) @ W.T
    return float(np.mean(np.sum(resid ** 2, axis=1)))


class KLExpansion(TransformerMixin, BaseEstimator):
    """PCA/KL parametrization as a scikit-learn transformer.

    ``fit`` takes prior realizations ``(n_real, n_cells)``; ``transform``
    maps fields to latent coefficients and ``inverse_transform`` maps
    coefficients back to fields.

    Parameters
    ----------
    energy : float, default=0.95
        Cumulative energy fraction to retain. Ignored if ``n_components``
        is set.
    n_components : int or None, default=None
        Fixed number of retained components.
    max_components : int or None, default=15
        Cap applied to the energy criterion.
    """

    def __init__(self, energy=0.95, n_components=None, max_components=15):
        self.energy = energy
        self.n_components = n_components
        self.max_components = max_components

    def fit(self, X, y=None):
        X = check_matrix(X, "X")
        mean, cov = dataset_statistics(X)
        self.full_basis_ = eigendecompose(cov, mean)
        if self.n_components is not None:
            self.basis_ = truncate(self.full_basis_, n_components=self.n_components)
        else:
            self.basis_ = truncate(self.full_basis_, energy=self.energy,
                                   max_components=self.max_components)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def mean_(self):
        return self.basis_.mean

    @property
    def components_(self):
        return self.basis_.retained.T

    @property
    def explained_variance_(self):
        return self.basis_.retained_eigenvalues

    @property
    def explained_variance_ratio_(self):
        return self.full_basis_.energy_fractions[: self.basis_.n_components]

    def with_basis(self, basis: ReducedBasis):
        """Copy of this fitted transformer using an adapted basis."""
        check_is_fitted(self, "basis_")
        new = self.__class__(**self.get_params())
        new.full_basis_ = self.full_basis_
        new.n_features_in_ = self.n_features_in_
        new.basis_ = basis
        return new

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_matrix(X, "X")
        if X.shape[1] != self.basis_.n_cells:
            raise InvalidArgument(f"X has {X.shape[1]} cells, basis has {self.basis_.n_cells}")
        return (X - self.basis_.mean) @ self.basis_.retained / self.basis_.scale

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_matrix(X, "X")
        if X.shape[1] != self.basis_.n_components:
            raise InvalidArgument(f"X has {X.shape[1]} coefficients, basis has {self.basis_.n_components}")
        return self.basis_.mean + (X * self.basis_.scale) @ self.basis_.retained.T

