"""Online intermittent-initial-excitation (IIE) monitoring.

A subsystem is intermittently initially excited once the excitation
accumulated over its active windows,

    acc_i(t) = integral of indicator_i(tau) Nf^T Nf dtau,

clears a positive-definite level. Because the memory stacks restore the
information matrix at switch-in, the live ``Qf`` during an active window of
subsystem ``i`` equals the indicator-gated accumulator for ``i``, so the
condition can be checked online through the minimum eigenvalue of the live
``Qf``: the first instant it exceeds ``eps_pd`` while ``i`` is active is the
detection time. At that instant the monitor snapshots ``Qf`` and ``Gf``
(one-shot) and latches the per-subsystem flag; the snapshot feeds the
convergence-rate term of the estimator bank.

The minimum eigenvalue, not the determinant, is the detection statistic:
the determinant scales like ``lambda^p`` and underflows for moderate ``p``,
while ``lambda_min`` has the same sign semantics for symmetric PSD matrices
and directly bounds the achievable convergence rate.

Persistence-of-excitation is deliberately not enforced anywhere; a sliding
window scan is provided as a diagnostic only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .regressor import Dimensions
from .validation import check_symmetric, require_index

__all__ = [
    "IIEStatus",
    "DetectionEvent",
    "indicator",
    "check_pd",
    "update_iie",
    "accumulate_excitation",
    "verify_persistent_pd",
    "pe_window_scan",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionEvent:
    subsystem: int
    time: float
    lambda_min: float


@dataclass
class IIEStatus:
    """Per-subsystem excitation flags, snapshots, and accumulators.

    ``excited[i-1]`` latches to True exactly once; the snapshot pair is
    written at that instant and never again (unless an experimental refresh
    is explicitly requested by the caller). ``gram_accum`` integrates
    ``Nf^T Nf`` over each subsystem's active windows and is nondecreasing in
    the Loewner order by construction.
    """

    excited: np.ndarray              # (M,) bool
    detected_at: np.ndarray          # (M,) float, nan until detection
    lambda_min_at_detection: np.ndarray  # (M,) float
    snap_info_matrix: np.ndarray     # (M, p, p)
    snap_info_vector: np.ndarray     # (M, p)
    gram_accum: np.ndarray           # (M, p, p)

    @classmethod
    def fresh(cls, dims: Dimensions) -> "IIEStatus":
        M, p = dims.num_subsystems, dims.param_dim
        return cls(
            excited=np.zeros(M, dtype=bool),
            detected_at=np.full(M, np.nan),
            lambda_min_at_detection=np.full(M, np.nan),
            snap_info_matrix=np.zeros((M, p, p)),
            snap_info_vector=np.zeros((M, p)),
            gram_accum=np.zeros((M, p, p)),
        )

    @property
    def num_subsystems(self) -> int:
        return self.excited.shape[0]

    def flags(self) -> np.ndarray:
        """Latched flags as 0/1 floats (the estimator-bank gate values)."""
        return self.excited.astype(float)


def indicator(sigma_now: int, i: int) -> int:
    """1 when subsystem ``i`` is the active one, else 0."""
    if int(sigma_now) < 1 or int(i) < 1:
        raise ValueError(f"subsystem indices are 1-based, got sigma={sigma_now}, i={i}")
    return 1 if int(sigma_now) == int(i) else 0


def check_pd(Q: np.ndarray, eps_pd: float) -> tuple[bool, float]:
    """Positive-definiteness test: ``lambda_min(Q) > eps_pd``.

    Returns the verdict and the minimum eigenvalue for logging. ``Q`` must
    be symmetric to 1e-8.
    """
    Q = np.asarray(Q, dtype=float)
    check_symmetric(Q, "Q", tol=1e-8)
    lam = float(np.linalg.eigvalsh(Q)[0])
    return lam > eps_pd, lam


def update_iie(status: IIEStatus, i_active: int, q_now: np.ndarray,
               g_vec_now: np.ndarray, t: float, eps_pd: float,
               lambda_min: float | None = None) -> DetectionEvent | None:
    """Detection step for the active subsystem at time ``t``.

    If the subsystem is not yet excited and the live information matrix is
    positive definite beyond ``eps_pd``, latch the flag, record the
    detection time, and snapshot ``(Qf, Gf)``. Inactive subsystems are never
    touched. Pass ``lambda_min`` when it is already known to avoid a second
    eigensolve.
    """
    i = require_index(i_active, status.num_subsystems, "i_active") - 1
    if status.excited[i]:
        return None
    if lambda_min is None:
        ok, lambda_min = check_pd(q_now, eps_pd)
    else:
        ok = lambda_min > eps_pd
    if not ok:
        return None
    status.excited[i] = True
    status.detected_at[i] = t
    status.lambda_min_at_detection[i] = lambda_min
    status.snap_info_matrix[i] = q_now
    status.snap_info_vector[i] = g_vec_now
    event = DetectionEvent(subsystem=i_active, time=float(t), lambda_min=float(lambda_min))
    logger.info(
        "excitation detected: subsystem %d at t=%.6g (lambda_min=%.3e)",
        i_active, t, lambda_min,
    )
    return event


def accumulate_excitation(status: IIEStatus, i_active: int,
                          nn_increment: np.ndarray) -> None:
    """Add one step's ``Nf^T Nf dt`` quadrature to the active accumulator."""
    i = require_index(i_active, status.num_subsystems, "i_active") - 1
    status.gram_accum[i] += nn_increment


def refresh_snapshot(status: IIEStatus, i_active: int, q_now: np.ndarray,
                     g_vec_now: np.ndarray, lambda_min: float) -> bool:
    """Experimental: replace the snapshot when a better-conditioned live
    information matrix appears. Off by default everywhere; keeping the
    one-shot snapshot is the reference behavior."""
    i = require_index(i_active, status.num_subsystems, "i_active") - 1
    if not status.excited[i] or lambda_min <= status.lambda_min_at_detection[i]:
        return False
    status.lambda_min_at_detection[i] = lambda_min
    status.snap_info_matrix[i] = q_now
    status.snap_info_vector[i] = g_vec_now
    return True


def verify_persistent_pd(times: np.ndarray, lambda_min_series: np.ndarray,
                         sigma_series: np.ndarray, i: int,
                         t_detect: float) -> bool:
    """Post-detection persistence check (diagnostic).

    True iff the live information matrix stayed strictly positive definite
    at every sample inside subsystem ``i``'s activation windows from the
    detection time onward.
    """
    times = np.asarray(times)
    mask = (np.asarray(sigma_series) == i) & (times >= t_detect)
    if not mask.any():
        return True
    return bool(np.all(np.asarray(lambda_min_series)[mask] > 0.0))


def pe_window_scan(times: np.ndarray, mats: np.ndarray, window: float) -> float:
    """Diagnostic sliding-window excitation level; gates nothing.

    Computes ``min_t lambda_min( integral_{t}^{t+window} M^T M dtau )`` by
    trapezoid quadrature over a series of matrices ``mats`` (T, n, p).
    """
    times = np.asarray(times, dtype=float)
    mats = np.asarray(mats, dtype=float)
    if mats.ndim != 3 or mats.shape[0] != times.shape[0]:
        raise ValueError("mats must be (T, n, p) matching times")
    dt = float(times[1] - times[0])
    steps = int(round(window / dt))
    if steps < 1 or steps >= times.shape[0]:
        raise ValueError(f"window {window} does not fit the series")
    grams = np.einsum("tij,tik->tjk", mats, mats)
    weights = np.full(steps + 1, dt)
    weights[0] = weights[-1] = 0.5 * dt
    worst = np.inf
    for start in range(times.shape[0] - steps):
        acc = np.tensordot(weights, grams[start:start + steps + 1], axes=(0, 0))
        worst = min(worst, float(np.linalg.eigvalsh(acc)[0]))
    return worst
