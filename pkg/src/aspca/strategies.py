"""Gradient-driven basis adaptation: rotation, extension and swap.

All three start from the decomposition of the objective gradient over the
retained and truncated eigenvectors. Rotation mixes truncated vectors into
each retained one with first-order perturbation coefficients

    c1[i, n] = alpha[i, n] * beta_n / (beta_i - beta_n)

scaled by ``gamma = epsilon / max_i ||sum_n c1[i, n] phi_n||``. Extension
promotes the truncated vectors with the largest gradient coefficients;
swap exchanges them for the retained vectors with the smallest update.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ._validation import check_count, check_interval, check_positive, check_vector
from .exceptions import InvalidArgument
from .pca import ReducedBasis

logger = logging.getLogger(__name__)


class Strategy(str, Enum):
    ROTATION = "rotation"
    EXTENSION = "extension"
    SWAP = "swap"


@dataclass(frozen=True)
class SensitivityCoefficients:
    retained_c: np.ndarray
    complement_c: np.ndarray


@dataclass(frozen=True)
class RotationConfig:
    epsilon: float = 0.1
    alpha_mode: str = "product"  # "product": c_i c_n, "ratio": c_n / c_i
    reorthonormalize: bool = True
    denom_tol: float = 1e-8

    def __post_init__(self):
        check_interval(self.epsilon, "epsilon", 0.0, 1.0)
        check_positive(self.denom_tol, "denom_tol")
        if self.alpha_mode not in ("product", "ratio"):
            raise InvalidArgument(f"alpha_mode must be 'product' or 'ratio', got {self.alpha_mode!r}")


@dataclass
class AdaptationEvent:
    strategy: str
    iteration: int
    basis_before_hash: str
    basis_after_hash: str
    gamma: float | None = None
    added: list = field(default_factory=list)
    swapped: list = field(default_factory=list)
    projection_loss: float | None = None

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "iteration": self.iteration,
            "gamma": self.gamma,
            "added": self.added,
            "swapped": self.swapped,
            "projection_loss": self.projection_loss,
            "basis_before_hash": self.basis_before_hash,
            "basis_after_hash": self.basis_after_hash,
        }


def sensitivity_coefficients(basis: ReducedBasis, grad_m) -> SensitivityCoefficients:
    grad_m = check_vector(grad_m, "grad_m", size=basis.n_cells)
    return SensitivityCoefficients(basis.retained.T @ grad_m, basis.complement.T @ grad_m)


def first_order_coefficients(basis: ReducedBasis, coeffs: SensitivityCoefficients,
                             alpha_mode="product", denom_tol=1e-8) -> np.ndarray:
    """Matrix ``c1[i, n]`` (retained i, complement n) of first-order mixing weights."""
    ci = coeffs.retained_c[:, None]
    cn = coeffs.complement_c[None, :]
    bi = basis.retained_eigenvalues[:, None]
    bn = basis.complement_eigenvalues[None, :]
    beta_max = max(basis.retained_eigenvalues.max(),
                   basis.complement_eigenvalues.max(initial=0.0))

    if alpha_mode == "product":
        alpha = ci * cn
    else:
        tiny = np.abs(coeffs.retained_c) <= np.finfo(float).eps * max(
            np.abs(coeffs.retained_c).max(initial=0.0), np.abs(coeffs.complement_c).max(initial=0.0))
        for i in np.flatnonzero(tiny & np.any(coeffs.complement_c != 0)):
            logger.warning("ratio mode: retained coefficient %d is ~0, skipping its rotation", i)
        with np.errstate(divide="ignore", invalid="ignore"):
            alpha = np.where(tiny[:, None], 0.0, cn / np.where(tiny, 1.0, coeffs.retained_c)[:, None])

    gap = bi - bn
    ok = np.abs(gap) >= denom_tol * beta_max
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.where(ok, alpha * bn / np.where(ok, gap, 1.0), 0.0)
    return c1


def _gram_schmidt(W):
    q, r = np.linalg.qr(W)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def rotation_update(basis: ReducedBasis, coeffs: SensitivityCoefficients,
                    cfg: RotationConfig = RotationConfig(), return_gamma=False):
    """Rotate retained vectors toward gradient-relevant truncated ones.

    Eigenvalues, the complement and the mean are left untouched. Returns the
    input basis when every mixing weight vanishes.
    """
    c1 = first_order_coefficients(basis, coeffs, cfg.alpha_mode, cfg.denom_tol)
    updates = basis.complement @ c1.T  # column i is sum_n c1[i, n] phi_n
    norms = np.linalg.norm(updates, axis=0)
    if norms.size == 0 or norms.max() == 0:
        return (basis, None) if return_gamma else basis
    gamma = cfg.epsilon / norms.max()
    W = basis.retained + gamma * updates
    W = W / np.linalg.norm(W, axis=0)
    if cfg.reorthonormalize:
        W = _gram_schmidt(W)
    new = replace(basis, retained=W)
    return (new, gamma) if return_gamma else new


def _rank_desc(values):
    # stable: ties keep original order
    return np.argsort(-np.asarray(values), kind="stable")


def extension_update(basis: ReducedBasis, coeffs: SensitivityCoefficients, n_add: int,
                     return_indices=False):
    """Promote the ``n_add`` truncated vectors with the largest ``|c|``."""
    n_add = check_count(n_add, "n_add", minimum=0)
    n_comp = basis.complement.shape[1]
    if n_add > n_comp:
        raise InvalidArgument(f"n_add={n_add} exceeds complement size {n_comp}")
    if n_add == 0 or not np.any(coeffs.complement_c):
        return (basis, []) if return_indices else basis
    chosen = _rank_desc(np.abs(coeffs.complement_c))[:n_add]
    keep = np.setdiff1d(np.arange(n_comp), chosen)
    new = replace(
        basis,
        retained=np.hstack([basis.retained, basis.complement[:, chosen]]),
        retained_eigenvalues=np.concatenate([basis.retained_eigenvalues,
                                             basis.complement_eigenvalues[chosen]]),
        complement=basis.complement[:, keep],
        complement_eigenvalues=basis.complement_eigenvalues[keep],
    )
    return (new, chosen.tolist()) if return_indices else new


def swap_update(basis: ReducedBasis, coeffs: SensitivityCoefficients, n_swap: int,
                cfg: RotationConfig = RotationConfig(), return_pairs=False):
    """Exchange the weakest retained vectors for the strongest truncated ones.

    Retained vectors are ranked by the norm of their first-order update
    (row norms of ``c1``), truncated ones by ``|c|``. Swapped vectors take
    each other's slots, carrying their eigenvalues along.
    """
    n_swap = check_count(n_swap, "n_swap", minimum=0)
    N, n_comp = basis.n_components, basis.complement.shape[1]
    if n_swap > min(N - 1, n_comp):
        raise InvalidArgument(f"n_swap={n_swap} must be <= min(N - 1, complement size) = {min(N - 1, n_comp)}")
    if n_swap == 0 or not np.any(coeffs.complement_c):
        return (basis, []) if return_pairs else basis

    c1 = first_order_coefficients(basis, coeffs, cfg.alpha_mode, cfg.denom_tol)
    strength = np.linalg.norm(c1, axis=1)
    # ascending strength; ties drop the later (lower-energy) vector first
    weakest = np.lexsort((-np.arange(N), strength))[:n_swap]
    strongest = _rank_desc(np.abs(coeffs.complement_c))[:n_swap]

    W, bw = basis.retained.copy(), basis.retained_eigenvalues.copy()
    C, bc = basis.complement.copy(), basis.complement_eigenvalues.copy()
    for i, j in zip(weakest, strongest):
        W[:, i], C[:, j] = basis.complement[:, j], basis.retained[:, i]
        bw[i], bc[j] = basis.complement_eigenvalues[j], basis.retained_eigenvalues[i]
    new = replace(basis, retained=W, retained_eigenvalues=bw, complement=C, complement_eigenvalues=bc)
    pairs = [[int(i), int(j)] for i, j in zip(weakest, strongest)]
    return (new, pairs) if return_pairs else new
