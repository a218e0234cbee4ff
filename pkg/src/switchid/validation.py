"""Small input-validation helpers shared across the package.

All checkers raise ``ValueError`` with the offending name and the
expected/actual sizes spelled out, so configuration mistakes surface with
actionable messages instead of numpy broadcasting errors deep in a run.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_vector",
    "as_matrix",
    "require_positive",
    "require_index",
    "check_finite",
    "check_symmetric",
    "check_spd",
]


def as_vector(value, length: int, name: str) -> np.ndarray:
    """Coerce to a float64 vector of exactly ``length`` entries."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != length:
        raise ValueError(
            f"{name}: expected vector of length {length}, got shape {arr.shape}"
        )
    return arr


def as_matrix(value, shape: tuple[int, int], name: str) -> np.ndarray:
    """Coerce to a float64 matrix of exactly ``shape``."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2 or arr.shape != shape:
        raise ValueError(
            f"{name}: expected matrix of shape {shape}, got shape {arr.shape}"
        )
    return arr


def require_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def require_index(value: int, count: int, name: str) -> int:
    """Validate a 1-based subsystem index."""
    idx = int(value)
    if idx < 1 or idx > count:
        raise ValueError(f"{name} must lie in 1..{count}, got {idx}")
    return idx


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_symmetric(mat: np.ndarray, name: str, tol: float = 1e-8) -> np.ndarray:
    skew = float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0
    if skew > tol:
        raise ValueError(f"{name} is not symmetric: max |M - M^T| = {skew:.3e} > {tol:.1e}")
    return mat


def check_spd(mat: np.ndarray, name: str, tol: float = 1e-8) -> np.ndarray:
    """Validate a symmetric positive-definite matrix via its spectrum."""
    check_symmetric(mat, name, tol)
    lam = float(np.linalg.eigvalsh(mat)[0])
    if lam <= 0.0:
        raise ValueError(f"{name} must be positive definite; min eigenvalue = {lam:.3e}")
    return mat
