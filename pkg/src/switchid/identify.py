"""Trajectory-driven identification: stepping loop and estimator API.

:class:`IdentificationPipeline` wires the filter bank, excitation monitor,
memory stacks, and estimator bank into one deterministic loop over a
recorded :class:`~switchid.plant.Trajectory`. Per sample, in this order:

1. handle a switching event (store outgoing stack slot, restore incoming,
   reset the reconstruction anchor);
2. excitation-monitor detection check on the current information matrix
   (the detection instant therefore always lies inside the active window,
   and the latched flag takes effect causally from this step on);
3. log the sample;
4. advance layer-1 then layer-2 filters one RK4 step;
5. accumulate the per-subsystem excitation integral;
6. advance all estimators one RK4 step against the same filter stages.

:class:`SwitchedSystemIdentifier` wraps the pipeline in a scikit-learn
style estimator (``fit`` / ``predict`` / ``get_params``).
:class:`CompositeIdentifier` is the degenerate non-switched variant kept as
an independent baseline; on a single-subsystem trajectory the switched
pipeline reproduces its trace bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .estimator import EstimatorGains, active_update_rhs, step_all
from .excitation import IIEStatus, accumulate_excitation, refresh_snapshot, update_iie
from .filters import (FilterBankState, FilterGains, FilterStages, MemoryStacks,
                      StepForcing, layer1_step, layer2_step, on_switch)
from .plant import DivergenceError, Trajectory
from .regressor import Dimensions, build_regressor_series, unpack_params
from .validation import require_positive

__all__ = [
    "IdentificationPipeline",
    "IdentificationResult",
    "SwitchedSystemIdentifier",
    "CompositeIdentifier",
]

logger = logging.getLogger(__name__)


@dataclass
class IdentificationResult:
    """Full per-sample record of one identification run."""

    times: np.ndarray            # (K+1,)
    sigma: np.ndarray            # (K+1,)
    theta_hat_hist: np.ndarray   # (K+1, M, p)
    excited_hist: np.ndarray     # (K+1, M) int8
    lambda_min_hist: np.ndarray  # (K+1,)
    prediction_error_hist: np.ndarray  # (K+1, M) ||N th^ - g|| live or stack
    detections: list             # DetectionEvent per subsystem, detection order
    status: IIEStatus
    stacks: MemoryStacks
    filter_state: FilterBankState
    gains: EstimatorGains        # with auto-tuned k_snap resolved
    store_events: list = field(default_factory=list)  # (t, subsystem, lambda_min of stored Qf)

    @property
    def theta_hat(self) -> np.ndarray:
        return self.theta_hat_hist[-1]

    def min_stack_lambda(self, i: int, t_from: float) -> float:
        """Smallest stored-information-matrix lambda_min for subsystem ``i``
        over switch-outs at or after ``t_from``; 0.0 if none happened."""
        lams = [lam for (t, sub, lam) in self.store_events if sub == i and t >= t_from]
        return min(lams) if lams else 0.0


class IdentificationPipeline:
    """Single-owner stepping loop over a recorded trajectory.

    When an ``observer(step_index, pipeline)`` callable is given, it is
    called once per grid step after the estimator update, with the pipeline
    exposing ``filter_state``, ``stacks``, ``status``, ``theta_hats`` and
    ``stages`` for inspection. Observers must treat everything as
    read-only.
    """

    def __init__(self, trajectory: Trajectory, filter_gains: FilterGains,
                 estimator_gains: EstimatorGains, eps_pd: float,
                 theta0: np.ndarray | None = None, learn_inactive: bool = True,
                 snapshot_refresh: bool = False, observer=None):
        self.trajectory = trajectory
        self.filter_gains = filter_gains
        self.gains = estimator_gains
        self.eps_pd = require_positive(eps_pd, "eps_pd")
        self.learn_inactive = bool(learn_inactive)
        self.snapshot_refresh = bool(snapshot_refresh)
        self.observer = observer

        M = estimator_gains.num_subsystems
        if trajectory.num_subsystems > M:
            raise ValueError(
                f"trajectory switches among {trajectory.num_subsystems} subsystems "
                f"but gains cover only {M}"
            )
        self.dims = Dimensions(n=trajectory.n, m=trajectory.m, num_subsystems=M)
        p = self.dims.param_dim
        if theta0 is None:
            self.theta_hats = np.zeros((M, p))
        else:
            theta0 = np.asarray(theta0, dtype=float)
            if theta0.shape != (M, p):
                raise ValueError(f"theta0 must have shape {(M, p)}, got {theta0.shape}")
            self.theta_hats = theta0.copy()

        t0 = float(trajectory.times[0])
        self.filter_state = FilterBankState.initial(self.dims, t0, trajectory.states[0])
        self.stacks = MemoryStacks.zeros(self.dims)
        self.status = IIEStatus.fresh(self.dims)
        self.stages: FilterStages | None = None

    def run(self) -> IdentificationResult:
        traj = self.trajectory
        K = traj.num_steps
        M, p = self.dims.num_subsystems, self.dims.param_dim
        dt = traj.dt
        times, sigma = traj.times, traj.sigma

        # Regressor samples on the half grid, built once.
        xs_half = np.empty((2 * K + 1, traj.n))
        xs_half[0::2] = traj.states
        xs_half[1::2] = traj.states_mid
        us_half = np.empty((2 * K + 1, traj.m))
        us_half[0::2] = traj.inputs
        us_half[1::2] = traj.inputs_mid
        Y_half = build_regressor_series(xs_half, us_half)

        theta_hist = np.empty((K + 1, M, p))
        excited_hist = np.empty((K + 1, M), dtype=np.int8)
        lambda_hist = np.empty(K + 1)
        pred_err_hist = np.empty((K + 1, M))
        detections: list = []
        store_events: list = []

        state, stacks, status, gains = (self.filter_state, self.stacks,
                                        self.status, self.gains)

        def partial_result(rows):
            return IdentificationResult(
                times=times[:rows], sigma=sigma[:rows],
                theta_hat_hist=theta_hist[:rows],
                excited_hist=excited_hist[:rows],
                lambda_min_hist=lambda_hist[:rows],
                prediction_error_hist=pred_err_hist[:rows],
                detections=detections, status=status, stacks=stacks,
                filter_state=state, gains=gains, store_events=store_events,
            )

        # divergence is detected explicitly each step; keep numpy quiet
        # about the overflows that precede an abort
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(K + 1):
                t = float(times[j])
                sub = int(sigma[j])
                if j > 0 and sub != int(sigma[j - 1]):
                    outgoing = int(sigma[j - 1])
                    if status.excited[outgoing - 1]:
                        store_events.append(
                            (t, outgoing,
                             float(np.linalg.eigvalsh(state.info_matrix)[0]))
                        )
                    on_switch(state, stacks, outgoing, sub, t, traj.states[j])

                lam = float(np.linalg.eigvalsh(state.info_matrix)[0])
                if self.snapshot_refresh and status.excited[sub - 1]:
                    refresh_snapshot(status, sub, state.info_matrix,
                                     state.info_vector, lam)
                event = update_iie(status, sub, state.info_matrix,
                                   state.info_vector, t, self.eps_pd,
                                   lambda_min=lam)
                if event is not None:
                    detections.append(event)
                    if not np.isfinite(gains.k_snap[sub - 1]):
                        gains.k_snap[sub - 1] = (
                            2.0 * gains.rate_target[sub - 1] / event.lambda_min
                        )
                        logger.info("auto-tuned k_snap[%d] = %.6g", sub,
                                    gains.k_snap[sub - 1])

                theta_hist[j] = self.theta_hats
                excited_hist[j] = status.excited
                lambda_hist[j] = lam
                # prediction errors are observable: the filter identities make
                # N th^ - g equal N (th^ - th) without knowing th
                for i in range(M):
                    if i + 1 == sub:
                        resid = state.n_filt @ self.theta_hats[i] - state.g_filt
                    else:
                        resid = (stacks.regressor[i] @ self.theta_hats[i]
                                 - stacks.xdot[i])
                    pred_err_hist[j, i] = np.sqrt(resid @ resid)
                if j == K:
                    break

                forcing = StepForcing(
                    t=t,
                    x0=traj.states[j], xm=traj.states_mid[j],
                    x1=traj.states[j + 1],
                    Y0=Y_half[2 * j], Ym=Y_half[2 * j + 1], Y1=Y_half[2 * j + 2],
                )
                l1_n, l1_g = layer1_step(state, forcing, self.filter_gains, dt)
                self.stages = layer2_step(state, l1_n, l1_g,
                                          self.filter_gains, dt)
                accumulate_excitation(status, sub, self.stages.nn_increment)
                try:
                    step_all(self.theta_hats, sub, self.stages, stacks, status,
                             gains, dt, t, learn_inactive=self.learn_inactive)
                except DivergenceError as exc:
                    # rows up to j are valid; let the caller flush them
                    exc.partial_result = partial_result(j + 1)
                    raise
                if self.observer is not None:
                    self.observer(j, self)

        return IdentificationResult(
            times=times, sigma=sigma, theta_hat_hist=theta_hist,
            excited_hist=excited_hist, lambda_min_hist=lambda_hist,
            prediction_error_hist=pred_err_hist,
            detections=detections, status=status, stacks=stacks,
            filter_state=state, gains=gains, store_events=store_events,
        )


class SwitchedSystemIdentifier(BaseEstimator):
    """Identify the subsystem matrices of a switched affine system.

    Scikit-learn style front end over :class:`IdentificationPipeline`:
    construct with gains, call :meth:`fit` on a recorded
    :class:`~switchid.plant.Trajectory` (states, inputs, and the switching
    signal), then read the per-subsystem estimates or call :meth:`predict`.

    Parameters
    ----------
    num_subsystems : int or None
        Number of subsystems; inferred from the trajectory if None.
    k_layer1, k_layer2 : float
        Filter bandwidths of the two low-pass layers.
    learning_gain : float
        Scalar learning gain (a multiple of the identity).
    k_pred, k_info : float
        Weights of the prediction-error and information-filter terms.
    k_snap : float or None
        Weight of the excitation-snapshot term; None auto-tunes it at
        detection to twice the value required by the gain condition.
    rate_target : float
        Desired post-detection convergence-rate parameter.
    eps_pd : float
        Minimum-eigenvalue threshold of the excitation detector.
    theta0 : array (M, p) or None
        Initial estimates; zeros if None.
    learn_inactive : bool
        Keep learning from the memory stack while a subsystem is inactive.
        Disabling this exists for ablation studies.
    snapshot_refresh : bool
        Experimental: replace the excitation snapshot whenever a
        better-conditioned information matrix appears.

    Attributes (after ``fit``)
    --------------------------
    theta_hat_ : array (M, p); A_hat_, B_hat_ : per-subsystem matrices;
    excited_ : bool (M,); detection_times_ : float (M,), NaN if undetected;
    result_ : the full :class:`IdentificationResult`.

    Example
    -------
    >>> traj = simulate(plant, schedule, excitation, t_end=20.0, dt=1e-3)
    >>> ident = SwitchedSystemIdentifier().fit(traj)
    >>> ident.A_hat_[0]
    """

    def __init__(self, num_subsystems=None, k_layer1=2.0, k_layer2=1.0,
                 learning_gain=10.0, k_pred=1.0, k_info=1.0, k_snap=None,
                 rate_target=0.025, eps_pd=1e-3, theta0=None,
                 learn_inactive=True, snapshot_refresh=False):
        self.num_subsystems = num_subsystems
        self.k_layer1 = k_layer1
        self.k_layer2 = k_layer2
        self.learning_gain = learning_gain
        self.k_pred = k_pred
        self.k_info = k_info
        self.k_snap = k_snap
        self.rate_target = rate_target
        self.eps_pd = eps_pd
        self.theta0 = theta0
        self.learn_inactive = learn_inactive
        self.snapshot_refresh = snapshot_refresh

    def fit(self, trajectory: Trajectory, y=None, observer=None):
        M = self.num_subsystems or trajectory.num_subsystems
        dims = Dimensions(n=trajectory.n, m=trajectory.m, num_subsystems=M)
        gains = EstimatorGains.homogeneous(
            dims, learning_gain=self.learning_gain, k_pred=self.k_pred,
            k_info=self.k_info, k_snap=self.k_snap, rate_target=self.rate_target,
        )
        pipeline = IdentificationPipeline(
            trajectory, FilterGains(self.k_layer1, self.k_layer2), gains,
            eps_pd=self.eps_pd, theta0=self.theta0,
            learn_inactive=self.learn_inactive,
            snapshot_refresh=self.snapshot_refresh, observer=observer,
        )
        result = pipeline.run()
        self.result_ = result
        self.dims_ = dims
        self.theta_hat_ = result.theta_hat.copy()
        pairs = [unpack_params(th, dims) for th in self.theta_hat_]
        self.A_hat_ = [A for A, _ in pairs]
        self.B_hat_ = [B for _, B in pairs]
        self.excited_ = result.status.excited.copy()
        self.detection_times_ = result.status.detected_at.copy()
        return self

    def predict(self, states, inputs, sigma) -> np.ndarray:
        """Predicted state derivatives ``A_hat_sigma x + B_hat_sigma u``."""
        if not hasattr(self, "theta_hat_"):
            raise NotFittedError("call fit() before predict()")
        states = np.atleast_2d(np.asarray(states, dtype=float))
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        sigma = np.atleast_1d(np.asarray(sigma, dtype=int))
        out = np.empty((states.shape[0], self.dims_.n))
        for i in range(1, self.dims_.num_subsystems + 1):
            mask = sigma == i
            if mask.any():
                A, B = self.A_hat_[i - 1], self.B_hat_[i - 1]
                out[mask] = states[mask] @ A.T + inputs[mask] @ B.T
        return out


class CompositeIdentifier(BaseEstimator):
    """Non-switched composite estimator (single subsystem, no memory stacks).

    Independent reference implementation of the degenerate case: dual-layer
    filters, excitation detection, and one estimate, with no switch handling
    anywhere in the loop. Kept deliberately separate so the switched
    pipeline can be regression-tested against it bit for bit.
    """

    def __init__(self, k_layer1=2.0, k_layer2=1.0, learning_gain=10.0,
                 k_pred=1.0, k_info=1.0, k_snap=None, rate_target=0.025,
                 eps_pd=1e-3, theta0=None):
        self.k_layer1 = k_layer1
        self.k_layer2 = k_layer2
        self.learning_gain = learning_gain
        self.k_pred = k_pred
        self.k_info = k_info
        self.k_snap = k_snap
        self.rate_target = rate_target
        self.eps_pd = eps_pd
        self.theta0 = theta0

    def fit(self, trajectory: Trajectory, y=None):
        if trajectory.num_subsystems != 1 or np.any(trajectory.sigma != 1):
            raise ValueError("CompositeIdentifier requires a single-subsystem trajectory")
        dims = Dimensions(n=trajectory.n, m=trajectory.m, num_subsystems=1)
        fgains = FilterGains(self.k_layer1, self.k_layer2)
        gains = EstimatorGains.homogeneous(
            dims, learning_gain=self.learning_gain, k_pred=self.k_pred,
            k_info=self.k_info, k_snap=self.k_snap, rate_target=self.rate_target,
        )
        K = trajectory.num_steps
        dt = trajectory.dt
        p = dims.param_dim

        xs_half = np.empty((2 * K + 1, trajectory.n))
        xs_half[0::2] = trajectory.states
        xs_half[1::2] = trajectory.states_mid
        us_half = np.empty((2 * K + 1, trajectory.m))
        us_half[0::2] = trajectory.inputs
        us_half[1::2] = trajectory.inputs_mid
        Y_half = build_regressor_series(xs_half, us_half)

        state = FilterBankState.initial(dims, float(trajectory.times[0]),
                                        trajectory.states[0])
        status = IIEStatus.fresh(dims)
        theta = (np.zeros(p) if self.theta0 is None
                 else np.asarray(self.theta0, dtype=float).reshape(p).copy())
        theta_hist = np.empty((K + 1, p))
        lambda_hist = np.empty(K + 1)

        half = 0.5 * dt
        for j in range(K + 1):
            t = float(trajectory.times[j])
            lam = float(np.linalg.eigvalsh(state.info_matrix)[0])
            event = update_iie(status, 1, state.info_matrix, state.info_vector,
                               t, self.eps_pd, lambda_min=lam)
            if event is not None and not np.isfinite(gains.k_snap[0]):
                gains.k_snap[0] = 2.0 * gains.rate_target[0] / event.lambda_min
            theta_hist[j] = theta
            lambda_hist[j] = lam
            if j == K:
                break
            forcing = StepForcing(
                t=t, x0=trajectory.states[j], xm=trajectory.states_mid[j],
                x1=trajectory.states[j + 1],
                Y0=Y_half[2 * j], Ym=Y_half[2 * j + 1], Y1=Y_half[2 * j + 2],
            )
            l1_n, l1_g = layer1_step(state, forcing, fgains, dt)
            stages = layer2_step(state, l1_n, l1_g, fgains, dt)
            s_flag = 1.0 if status.excited[0] else 0.0
            gamma = gains.learning_gain[0]
            kp, ki, ks = gains.k_pred[0], gains.k_info[0], gains.k_snap[0]
            snap_q, snap_g = status.snap_info_matrix[0], status.snap_info_vector[0]
            d1 = active_update_rhs(theta, stages.n_filt[0], stages.g_filt[0],
                                   stages.info_matrix[0], stages.info_vector[0],
                                   snap_q, snap_g, s_flag, gamma, kp, ki, ks)
            th2 = theta + half * d1
            d2 = active_update_rhs(th2, stages.n_filt[1], stages.g_filt[1],
                                   stages.info_matrix[1], stages.info_vector[1],
                                   snap_q, snap_g, s_flag, gamma, kp, ki, ks)
            th3 = theta + half * d2
            d3 = active_update_rhs(th3, stages.n_filt[2], stages.g_filt[2],
                                   stages.info_matrix[2], stages.info_vector[2],
                                   snap_q, snap_g, s_flag, gamma, kp, ki, ks)
            th4 = theta + dt * d3
            d4 = active_update_rhs(th4, stages.n_filt[3], stages.g_filt[3],
                                   stages.info_matrix[3], stages.info_vector[3],
                                   snap_q, snap_g, s_flag, gamma, kp, ki, ks)
            theta = theta + (dt / 6.0) * (d1 + 2.0 * (d2 + d3) + d4)

        self.theta_hat_ = theta.copy()
        self.theta_hat_hist_ = theta_hist
        self.lambda_min_hist_ = lambda_hist
        self.excited_ = status.excited.copy()
        self.detection_times_ = status.detected_at.copy()
        A, B = unpack_params(theta, dims)
        self.A_hat_, self.B_hat_ = A, B
        return self
