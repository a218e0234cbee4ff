"""Linear parameterization of switched affine dynamics.

A plant ``xdot = A x + B u`` with ``A`` (n x n) and ``B`` (n x m) can be
rewritten as ``xdot = Y(x, u) theta`` where

* ``Y(x, u) = [I_n (x) x^T,  I_n (x) u^T]`` is the known n x n(n+m)
  regressor ((x) is the Kronecker product), and
* ``theta = [vec(A^T); vec(B^T)]`` stacks the rows of ``A`` followed by the
  rows of ``B`` into a vector of length ``p = n(n+m)``.

Everything here is a pure function over immutable values; the adaptive
machinery in the rest of the package is built on this identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_vector

__all__ = [
    "Dimensions",
    "build_regressor",
    "build_regressor_series",
    "pack_params",
    "unpack_params",
    "predict_derivative",
]


@dataclass(frozen=True)
class Dimensions:
    """Problem sizes: state dim ``n``, input dim ``m``, subsystem count."""

    n: int
    m: int
    num_subsystems: int = 1

    def __post_init__(self):
        for name in ("n", "m", "num_subsystems"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"Dimensions.{name} must be a positive integer, got {value}")

    @property
    def param_dim(self) -> int:
        """Length p = n(n+m) of one subsystem's parameter vector."""
        return self.n * (self.n + self.m)


def build_regressor(x, u, dims: Dimensions | None = None) -> np.ndarray:
    """Assemble ``Y = [I_n (x) x^T, I_n (x) u^T]``.

    Row ``i`` carries ``x`` in the i-th block of the state part and ``u`` in
    the i-th block of the input part; all other entries are exactly zero.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if dims is not None:
        x = as_vector(x, dims.n, "x")
        u = as_vector(u, dims.m, "u")
    elif x.ndim != 1 or u.ndim != 1:
        raise ValueError(f"x and u must be vectors, got shapes {x.shape}, {u.shape}")
    n, m = x.shape[0], u.shape[0]
    out = np.zeros((n, n * (n + m)))
    for i in range(n):
        out[i, i * n:(i + 1) * n] = x
        out[i, n * n + i * m:n * n + (i + 1) * m] = u
    return out


def build_regressor_series(xs: np.ndarray, us: np.ndarray) -> np.ndarray:
    """Vectorized :func:`build_regressor` over leading sample axis.

    ``xs`` is (T, n), ``us`` is (T, m); returns (T, n, n(n+m)).
    """
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    if xs.ndim != 2 or us.ndim != 2 or xs.shape[0] != us.shape[0]:
        raise ValueError(f"xs, us must be (T, n) and (T, m), got {xs.shape}, {us.shape}")
    T, n = xs.shape
    m = us.shape[1]
    out = np.zeros((T, n, n * (n + m)))
    for i in range(n):
        out[:, i, i * n:(i + 1) * n] = xs
        out[:, i, n * n + i * m:n * n + (i + 1) * m] = us
    return out


def pack_params(A, B) -> np.ndarray:
    """Stack ``[vec(A^T); vec(B^T)]``: rows of A, then rows of B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise ValueError(
            f"B must have the same row count as A ({A.shape[0]}), got shape {B.shape}"
        )
    return np.concatenate([A.ravel(), B.ravel()])


def unpack_params(theta, dims: Dimensions) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`pack_params` for the declared dimensions."""
    theta = as_vector(theta, dims.param_dim, "theta")
    n, m = dims.n, dims.m
    A = theta[: n * n].reshape(n, n).copy()
    B = theta[n * n:].reshape(n, m).copy()
    return A, B


def predict_derivative(Y, theta) -> np.ndarray:
    """State derivative ``Y @ theta`` implied by a parameter vector."""
    Y = np.asarray(Y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if Y.ndim != 2 or theta.ndim != 1 or Y.shape[1] != theta.shape[0]:
        raise ValueError(
            f"conformance error: Y is {Y.shape}, theta has length {theta.shape}"
        )
    return Y @ theta
