"""Input validation helpers.

Everything numeric in this package is float64; these helpers coerce and
check once at the API boundary so the kernels can assume clean inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, NumericError


def as_float_array(x, name: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce to a float64 ndarray, optionally enforcing an exact shape."""
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ConfigurationError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def as_chunk(x, name: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a 2D float64 action chunk, checking row/col counts if given."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigurationError(f"{name}: expected a 2D chunk, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise ConfigurationError(f"{name}: expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ConfigurationError(f"{name}: expected {cols} cols, got {arr.shape[1]}")
    return arr


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite values")
    return arr


def check_unit_time(t, name: str = "t") -> np.ndarray:
    """Times must sit in [0, 1] (tiny rounding slack allowed)."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.size and (arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12):
        raise ConfigurationError(f"{name}: values must lie in [0, 1], got range "
                                 f"[{arr.min()}, {arr.max()}]")
    return arr


def check_fitted(estimator, attr: str = "params_") -> None:
    if not hasattr(estimator, attr):
        raise ConfigurationError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first")


def check_probabilities(p, name: str = "probs", atol: float = 1e-12) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigurationError(f"{name}: expected a non-empty 1D array")
    if np.any(arr <= 0):
        raise ConfigurationError(f"{name}: probabilities must be strictly positive")
    if abs(arr.sum() - 1.0) > atol:
        raise ConfigurationError(f"{name}: must sum to 1 within {atol}, got {arr.sum()!r}")
    return arr
