"""Parallel parameter estimators with memory-backed inactive-phase learning.

One estimate ``theta_hat_i`` runs per subsystem. The update is a gradient
flow on filtered least-squares errors, scaled by a positive-definite
learning gain ``Gamma_i``:

active (sigma = i), driven by the live filters:

    rate = Gamma_i ( k_pred Nf^T (gf - Nf th)
                   + k_info (Gf - Qf th)
                   + s_i k_snap (Gs - Qs th) )

inactive (sigma != i), driven entirely by subsystem i's memory stack:

    rate = Gamma_i ( k_pred SN^T (Sg - SN th)
                   + k_info (SG - SQ th)
                   + s_i k_snap (Gs - Qs th) )

where ``(Qs, Gs)`` is the excitation snapshot frozen at detection and
``s_i`` the latched excitation flag. The true parameter vector is a fixed
point of both branches, the Lyapunov values ``V_i = th~^T Gamma_i^{-1}
th~ / 2`` are non-increasing along the flow, and once ``s_i = 1`` with the
gain condition ``k_snap lambda_min(Qs) >= rate_target`` the error decays
exponentially with a computable envelope, including through inactive
phases. A subsystem that has never been active has an all-zero stack and a
zero flag, so its estimate is exactly frozen.

Estimates advance with the same RK4 step as the filters, evaluated against
the filter stage values, so the coupled flow keeps fourth-order accuracy.
Per-subsystem updates within a step are mutually independent: results are
bit-identical under any update ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .excitation import IIEStatus
from .filters import FilterStages, MemoryStacks
from .plant import DivergenceError
from .regressor import Dimensions
from .validation import check_spd, require_index

__all__ = [
    "EstimatorGains",
    "active_update_rhs",
    "inactive_update_rhs",
    "step_all",
    "verify_gain_condition",
    "lyapunov_value",
    "envelope_constants",
    "fit_decay_rate",
    "count_envelope_violations",
    "envelope_violation_times",
    "DecayFit",
]


@dataclass
class EstimatorGains:
    """Per-subsystem learning gains.

    ``k_snap`` entries may start as NaN, meaning "auto-tune at detection":
    the stepping loop then sets ``k_snap = 2 rate_target /
    lambda_min(snapshot)`` once, which satisfies the convergence gain
    condition with a factor-two margin by construction.
    """

    learning_gain: np.ndarray   # (M, p, p) symmetric PD
    k_pred: np.ndarray          # (M,)
    k_info: np.ndarray          # (M,)
    k_snap: np.ndarray          # (M,), NaN = auto-tune at detection
    rate_target: np.ndarray     # (M,)

    def __post_init__(self):
        M = self.learning_gain.shape[0]
        for i in range(M):
            check_spd(self.learning_gain[i], f"learning_gain[{i + 1}]")
        for name in ("k_pred", "k_info", "rate_target"):
            arr = getattr(self, name)
            if arr.shape != (M,) or np.any(~np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"{name} must be {M} positive finite scalars")
        if self.k_snap.shape != (M,) or np.any(np.nan_to_num(self.k_snap, nan=1.0) <= 0):
            raise ValueError("k_snap must be positive scalars (NaN = auto-tune)")

    @classmethod
    def homogeneous(cls, dims: Dimensions, learning_gain=10.0, k_pred=1.0,
                    k_info=1.0, k_snap=None, rate_target=0.025) -> "EstimatorGains":
        """Same gains for every subsystem; scalar learning gain means a
        multiple of the identity."""
        M, p = dims.num_subsystems, dims.param_dim
        lg = np.asarray(learning_gain, dtype=float)
        if lg.ndim == 0:
            gamma = np.stack([float(lg) * np.eye(p)] * M)
        elif lg.ndim == 2:
            gamma = np.stack([lg.copy()] * M)
        else:
            gamma = lg.copy()
        snap = np.full(M, np.nan) if k_snap is None else np.full(M, float(k_snap))
        return cls(
            learning_gain=gamma,
            k_pred=np.full(M, float(k_pred)),
            k_info=np.full(M, float(k_info)),
            k_snap=snap,
            rate_target=np.full(M, float(rate_target)),
        )

    @property
    def num_subsystems(self) -> int:
        return self.learning_gain.shape[0]

    def gain_inverse(self, i: int) -> np.ndarray:
        require_index(i, self.num_subsystems, "i")
        return np.linalg.inv(self.learning_gain[i - 1])

    def gain_inv_eigrange(self, i: int) -> tuple[float, float]:
        """(lambda_min, lambda_max) of ``Gamma_i^{-1}``."""
        require_index(i, self.num_subsystems, "i")
        eig = np.linalg.eigvalsh(self.learning_gain[i - 1])
        return 1.0 / float(eig[-1]), 1.0 / float(eig[0])


def active_update_rhs(theta_hat, n_filt, g_filt, info_matrix, info_vector,
                      snap_q, snap_g, s_flag: float, gamma, k_pred: float,
                      k_info: float, k_snap: float) -> np.ndarray:
    """Estimate rate when the subsystem is active (live filter values)."""
    drive = k_pred * (n_filt.T @ (g_filt - n_filt @ theta_hat))
    drive += k_info * (info_vector - info_matrix @ theta_hat)
    if s_flag:
        drive += (s_flag * k_snap) * (snap_g - snap_q @ theta_hat)
    return gamma @ drive


def inactive_update_rhs(theta_hat, stack_regressor, stack_xdot,
                        stack_info_matrix, stack_info_vector,
                        snap_q, snap_g, s_flag: float, gamma, k_pred: float,
                        k_info: float, k_snap: float) -> np.ndarray:
    """Estimate rate when the subsystem is inactive (memory-stack values).

    Identically zero while the stack is still all-zero (never active).
    """
    drive = k_pred * (stack_regressor.T @ (stack_xdot - stack_regressor @ theta_hat))
    drive += k_info * (stack_info_vector - stack_info_matrix @ theta_hat)
    if s_flag:
        drive += (s_flag * k_snap) * (snap_g - snap_q @ theta_hat)
    return gamma @ drive


def _rk4_linear(theta, K_op, b, dt):
    """RK4 step of ``theta' = b - K theta`` with constant coefficients."""
    half = 0.5 * dt
    d1 = b - K_op @ theta
    d2 = b - K_op @ (theta + half * d1)
    d3 = b - K_op @ (theta + half * d2)
    d4 = b - K_op @ (theta + dt * d3)
    return theta + (dt / 6.0) * (d1 + 2.0 * (d2 + d3) + d4)


def step_all(theta_hats: np.ndarray, sigma_now: int, stages: FilterStages,
             stacks: MemoryStacks, status: IIEStatus, gains: EstimatorGains,
             dt: float, t: float, learn_inactive: bool = True,
             order=None) -> None:
    """Advance every estimator one RK4 step over ``[t, t+dt]``.

    The active subsystem integrates against the filter stage values of the
    same step; inactive subsystems integrate their constant-coefficient
    stack flow. ``order`` (any permutation of subsystems) exists to exercise
    the order-independence contract; results are bit-identical.
    """
    M = gains.num_subsystems
    half = 0.5 * dt
    indices = range(1, M + 1) if order is None else order
    flags = status.excited
    for sub in indices:
        i = sub - 1
        gamma = gains.learning_gain[i]
        kp, ki, ks = gains.k_pred[i], gains.k_info[i], gains.k_snap[i]
        s_flag = 1.0 if flags[i] else 0.0
        snap_q = status.snap_info_matrix[i]
        snap_g = status.snap_info_vector[i]
        if s_flag and not np.isfinite(ks):
            raise DivergenceError(
                f"subsystem {sub}: excitation latched but k_snap unresolved", time=t,
                subsystem=sub,
            )
        th = theta_hats[i]
        if not np.all(np.isfinite(th)):
            raise DivergenceError(
                f"estimate for subsystem {sub} diverged at t={t:.6g}",
                time=t, subsystem=sub,
            )
        if sub == sigma_now:
            d1 = active_update_rhs(th, stages.n_filt[0], stages.g_filt[0],
                                   stages.info_matrix[0], stages.info_vector[0],
                                   snap_q, snap_g, s_flag, gamma, kp, ki, ks)
            th2 = th + half * d1
            d2 = active_update_rhs(th2, stages.n_filt[1], stages.g_filt[1],
                                   stages.info_matrix[1], stages.info_vector[1],
                                   snap_q, snap_g, s_flag, gamma, kp, ki, ks)
            th3 = th + half * d2
            d3 = active_update_rhs(th3, stages.n_filt[2], stages.g_filt[2],
                                   stages.info_matrix[2], stages.info_vector[2],
                                   snap_q, snap_g, s_flag, gamma, kp, ki, ks)
            th4 = th + dt * d3
            d4 = active_update_rhs(th4, stages.n_filt[3], stages.g_filt[3],
                                   stages.info_matrix[3], stages.info_vector[3],
                                   snap_q, snap_g, s_flag, gamma, kp, ki, ks)
            new = th + (dt / 6.0) * (d1 + 2.0 * (d2 + d3) + d4)
        elif learn_inactive:
            SN = stacks.regressor[i]
            K_op = kp * (SN.T @ SN) + ki * stacks.info_matrix[i]
            b = kp * (SN.T @ stacks.xdot[i]) + ki * stacks.info_vector[i]
            if s_flag:
                K_op = K_op + (s_flag * ks) * snap_q
                b = b + (s_flag * ks) * snap_g
            new = _rk4_linear(th, gamma @ K_op, gamma @ b, dt)
        else:
            continue
        if not np.all(np.isfinite(new)):
            raise DivergenceError(
                f"estimate for subsystem {sub} diverged at t={t:.6g}",
                time=t, subsystem=sub,
            )
        theta_hats[i] = new


def verify_gain_condition(gains: EstimatorGains, status: IIEStatus,
                          i: int) -> tuple[bool, float]:
    """Check ``k_snap lambda_min(snapshot) >= rate_target`` for subsystem i.

    Only meaningful after detection; returns (satisfied, margin).
    """
    idx = require_index(i, gains.num_subsystems, "i") - 1
    if not status.excited[idx]:
        raise ValueError(f"subsystem {i}: excitation not yet detected")
    lam = float(np.linalg.eigvalsh(status.snap_info_matrix[idx])[0])
    margin = gains.k_snap[idx] * lam - gains.rate_target[idx]
    return margin >= 0.0, float(margin)


def lyapunov_value(theta_tilde: np.ndarray, gamma_inv: np.ndarray) -> float:
    """``V = theta~^T Gamma^{-1} theta~ / 2`` (nonnegative)."""
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    return 0.5 * float(theta_tilde @ gamma_inv @ theta_tilde)


def envelope_constants(gains: EstimatorGains, status: IIEStatus, i: int,
                       min_stack_lambda: float | None = None) -> dict:
    """Exponential-envelope constants implied by the gains and snapshots.

    Returns gamma1 (overshoot), gamma2 (guaranteed rate), the per-branch
    rates alpha/beta, and the intermediate constants. ``min_stack_lambda``
    is the smallest ``lambda_min`` of subsystem i's stored information
    matrix over its post-detection switch-outs (0 if it never switched out).
    """
    idx = require_index(i, gains.num_subsystems, "i") - 1
    lam_m, lam_M = gains.gain_inv_eigrange(i)
    eta_bar = float(gains.rate_target[idx])
    eta = float(gains.k_info[idx]) * float(min_stack_lambda or 0.0)
    xi = eta + eta_bar
    alpha = 2.0 * eta_bar / lam_M
    beta = 2.0 * xi / lam_M
    gamma_alpha = 0.5 * alpha
    gamma_beta = 0.5 * beta
    return {
        "gamma1": float(np.sqrt(lam_M / lam_m)),
        "gamma2": min(gamma_alpha, gamma_beta),
        "gamma_alpha": gamma_alpha,
        "gamma_beta": gamma_beta,
        "alpha": alpha,
        "beta": beta,
        "eta": eta,
        "eta_bar": eta_bar,
        "xi": xi,
        "lambda_m": lam_m,
        "lambda_M": lam_M,
    }


@dataclass(frozen=True)
class DecayFit:
    """Least-squares decay rate of ``log ||theta~||`` after detection."""

    gamma2_hat: float
    n_points: int
    t_start: float
    t_end: float


def fit_decay_rate(times: np.ndarray, tilde_norms: np.ndarray,
                   t_detect: float, floor: float = 1e-12) -> DecayFit:
    """Fit ``log ||theta~(t)||`` over ``[t_detect, t_end]`` by least squares.

    Samples at or below ``floor`` (converged to machine precision) are
    excluded from the fit. Returns the positive decay rate ``gamma2_hat``.
    """
    times = np.asarray(times, dtype=float)
    tilde_norms = np.asarray(tilde_norms, dtype=float)
    mask = (times >= t_detect) & (tilde_norms > floor)
    if mask.sum() < 2:
        raise ValueError("not enough post-detection samples above the floor to fit")
    tt = times[mask]
    yy = np.log(tilde_norms[mask])
    slope, _ = np.polyfit(tt, yy, 1)
    return DecayFit(
        gamma2_hat=float(-slope),
        n_points=int(mask.sum()),
        t_start=float(tt[0]),
        t_end=float(tt[-1]),
    )


def envelope_violation_times(times, tilde_norms, t_detect: float,
                             gamma1: float, gamma2: float,
                             floor: float = 0.0) -> np.ndarray:
    """Sample times where ``||theta~||`` exceeds the exponential envelope.

    The envelope anchors at the detection sample. A nonzero ``floor`` (an
    absolute error level treated as numerically converged) is honored by
    checking against ``max(envelope, floor)``.
    """
    times = np.asarray(times, dtype=float)
    tilde_norms = np.asarray(tilde_norms, dtype=float)
    mask = times >= t_detect
    if not mask.any():
        return np.empty(0)
    start = int(np.argmax(mask))
    ref = tilde_norms[start]
    envelope = gamma1 * ref * np.exp(-gamma2 * (times[mask] - times[start]))
    bound = np.maximum(envelope, floor)
    return times[mask][tilde_norms[mask] > bound]


def count_envelope_violations(times, tilde_norms, t_detect: float,
                              gamma1: float, gamma2: float,
                              floor: float = 0.0) -> int:
    """Number of samples violating the exponential envelope."""
    return int(envelope_violation_times(times, tilde_norms, t_detect,
                                        gamma1, gamma2, floor).shape[0])
