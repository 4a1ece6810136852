"""Input validation helpers.

Thin wrappers over ``sklearn.utils.check_array`` that raise the package's
own :class:`~aspca.exceptions.InvalidArgument` so callers only have to catch
one error type.
"""
import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import InvalidArgument


def check_vector(x, name="x", size=None, allow_nonfinite=False):
    """Return ``x`` as a 1-D float array, optionally checking its length."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidArgument(f"{name}: {exc}") from exc
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidArgument(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite values")
    if size is not None and arr.shape[0] != size:
        raise InvalidArgument(f"{name} has length {arr.shape[0]}, expected {size}")
    return arr


def check_matrix(a, name="a", shape=None):
    try:
        arr = check_array(a, dtype=np.float64, ensure_min_samples=1)
    except ValueError as exc:
        raise InvalidArgument(f"{name}: {exc}") from exc
    if shape is not None and arr.shape != tuple(shape):
        raise InvalidArgument(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidArgument(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise InvalidArgument(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidArgument(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidArgument(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_interval(value, name, low, high, closed_low=False, closed_high=False):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidArgument(f"{name} must be a finite real number, got {value!r}")
    lo_ok = value >= low if closed_low else value > low
    hi_ok = value <= high if closed_high else value < high
    if not (lo_ok and hi_ok):
        lb = "[" if closed_low else "("
        rb = "]" if closed_high else ")"
        raise InvalidArgument(f"{name} must lie in {lb}{low}, {high}{rb}, got {value!r}")
    return float(value)
