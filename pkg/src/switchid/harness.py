"""Scenario execution: simulate, identify, report, and check.

``run`` wires plant -> filters -> monitor -> estimators for a validated
scenario, then writes two artifacts:

* ``trace.csv``: one row per grid sample with the columns
  ``t, sigma, x*, u*, theta_hat_<i>_<j>, theta_tilde_norm_<i>, V_<i>,
  s_<i>, lambda_min_Q``. Identical seeds give byte-identical files.
* ``report.txt``: ``key: value`` lines aggregating the per-subsystem
  detection, gain-condition, and convergence figures.

``report_check`` turns a report into machine-readable pass/fail items for
CI-style gating. On a divergence abort the rows produced so far are still
flushed before the error propagates.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import envelope_constants, envelope_violation_times, fit_decay_rate
from .identify import IdentificationPipeline, IdentificationResult
from .plant import DivergenceError, Trajectory, simulate
from .scenario import ScenarioConfig

__all__ = [
    "run",
    "run_in_memory",
    "write_trace_csv",
    "RunReport",
    "SubsystemReport",
    "CheckCriteria",
    "CheckItem",
    "report_check",
    "HarnessRun",
]

logger = logging.getLogger(__name__)


@dataclass
class SubsystemReport:
    index: int
    detected: bool
    detected_at: float            # nan if never detected
    sigma_at_detection: int       # -1 if never detected
    lambda_min_snapshot: float
    k_snap: float
    gain_margin: float
    initial_tilde_norm: float
    final_tilde_norm: float
    final_ratio: float
    gamma1: float
    gamma2_bound: float
    gamma2_hat: float
    envelope_violations: int
    first_envelope_violation_t: float   # nan if none
    max_v_increase: float
    v_tolerance: float
    inactive_phase_regressions: int


@dataclass
class RunReport:
    scenario: str
    seed: int
    dt: float
    t_end: float
    steps: int
    wall_time_s: float
    min_lambda_min_q: float
    subsystems: list[SubsystemReport] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"scenario: {self.scenario}",
            f"seed: {self.seed}",
            f"dt: {self.dt!r}",
            f"t_end: {self.t_end!r}",
            f"steps: {self.steps}",
            f"wall_time_s: {self.wall_time_s:.3f}",
            f"min_lambda_min_q: {self.min_lambda_min_q!r}",
        ]
        for sub in self.subsystems:
            tag = f"subsystem_{sub.index}"
            lines += [
                f"{tag}.detected: {sub.detected}",
                f"{tag}.detected_at: {sub.detected_at!r}",
                f"{tag}.sigma_at_detection: {sub.sigma_at_detection}",
                f"{tag}.lambda_min_snapshot: {sub.lambda_min_snapshot!r}",
                f"{tag}.k_snap: {sub.k_snap!r}",
                f"{tag}.gain_margin: {sub.gain_margin!r}",
                f"{tag}.initial_tilde_norm: {sub.initial_tilde_norm!r}",
                f"{tag}.final_tilde_norm: {sub.final_tilde_norm!r}",
                f"{tag}.final_ratio: {sub.final_ratio!r}",
                f"{tag}.gamma1: {sub.gamma1!r}",
                f"{tag}.gamma2_bound: {sub.gamma2_bound!r}",
                f"{tag}.gamma2_hat: {sub.gamma2_hat!r}",
                f"{tag}.envelope_violations: {sub.envelope_violations}",
                f"{tag}.first_envelope_violation_t: {sub.first_envelope_violation_t!r}",
                f"{tag}.max_v_increase: {sub.max_v_increase!r}",
                f"{tag}.v_tolerance: {sub.v_tolerance!r}",
                f"{tag}.inactive_phase_regressions: {sub.inactive_phase_regressions}",
            ]
        return "\n".join(lines) + "\n"


@dataclass
class HarnessRun:
    """Everything a test or caller may want after one scenario run."""

    config: ScenarioConfig
    trajectory: Trajectory
    result: IdentificationResult
    report: RunReport
    tilde_norms: np.ndarray   # (K+1, M)
    lyapunov: np.ndarray      # (K+1, M)
    true_params: np.ndarray   # (M, p)


def _inactive_phases(times, sigma, i, t_from):
    """(start, end) sample indices of maximal windows with sigma != i after t_from."""
    K = len(times) - 1
    phases = []
    j = 0
    while j < K:
        if sigma[j] != i and times[j] >= t_from:
            k = j
            while k < K and sigma[k] != i:
                k += 1
            phases.append((j, k))
            j = k
        else:
            j += 1
    return phases


def run_in_memory(config: ScenarioConfig, observer=None) -> HarnessRun:
    """Simulate and identify one scenario without touching the filesystem."""
    plant = config.build_plant()
    schedule = config.build_schedule()
    t_start = time.perf_counter()
    trajectory = simulate(plant, schedule, config.excitation, config.t_end,
                          config.dt, x0=config.x0)
    pipeline = IdentificationPipeline(
        trajectory, config.filter_gains, config.estimator_gains(),
        eps_pd=config.eps_pd, theta0=config.theta0,
        learn_inactive=config.learn_inactive,
        snapshot_refresh=config.snapshot_refresh, observer=observer,
    )
    try:
        result = pipeline.run()
    except DivergenceError as exc:
        exc.trajectory = trajectory
        exc.true_params = plant.true_params
        raise
    wall = time.perf_counter() - t_start

    true_params = plant.true_params
    M = config.num_subsystems
    tilde = result.theta_hat_hist - true_params[None, :, :]
    tilde_norms = np.linalg.norm(tilde, axis=2)
    lyapunov = np.empty_like(tilde_norms)
    subs = []
    for i in range(M):
        gamma_inv = np.linalg.inv(result.gains.learning_gain[i])
        lyapunov[:, i] = 0.5 * np.einsum("kp,pq,kq->k", tilde[:, i], gamma_inv,
                                         tilde[:, i])
        v_tol = 1e-10 * float(lyapunov[:, i].max())
        max_dv = float(np.diff(lyapunov[:, i]).max()) if lyapunov.shape[0] > 1 else 0.0

        detected = bool(result.status.excited[i])
        t_det = float(result.status.detected_at[i])
        if detected:
            k_det = int(np.searchsorted(result.times, t_det))
            sigma_at_det = int(result.sigma[k_det])
            consts = envelope_constants(
                result.gains, result.status, i + 1,
                min_stack_lambda=result.min_stack_lambda(i + 1, t_det),
            )
            lam_snap = float(result.status.lambda_min_at_detection[i])
            margin = float(result.gains.k_snap[i] * lam_snap
                           - result.gains.rate_target[i])
            try:
                gamma2_hat = fit_decay_rate(result.times, tilde_norms[:, i],
                                            t_det).gamma2_hat
            except ValueError:
                gamma2_hat = float("nan")
            viol_times = envelope_violation_times(
                result.times, tilde_norms[:, i], t_det,
                consts["gamma1"], consts["gamma2"],
            )
            violations = int(viol_times.shape[0])
            first_viol = float(viol_times[0]) if violations else float("nan")
            regressions = sum(
                1 for a, b in _inactive_phases(result.times, result.sigma, i + 1, t_det)
                if not tilde_norms[b, i] < tilde_norms[a, i]
            )
        else:
            sigma_at_det = -1
            consts = {"gamma1": float("nan"), "gamma2": float("nan")}
            lam_snap, margin, gamma2_hat = float("nan"), float("nan"), float("nan")
            violations, regressions = 0, 0
            first_viol = float("nan")

        subs.append(SubsystemReport(
            index=i + 1,
            detected=detected,
            detected_at=t_det,
            sigma_at_detection=sigma_at_det,
            lambda_min_snapshot=lam_snap,
            k_snap=float(result.gains.k_snap[i]),
            gain_margin=margin,
            initial_tilde_norm=float(tilde_norms[0, i]),
            final_tilde_norm=float(tilde_norms[-1, i]),
            final_ratio=float(tilde_norms[-1, i] / max(tilde_norms[0, i], 1e-300)),
            gamma1=float(consts["gamma1"]),
            gamma2_bound=float(consts["gamma2"]),
            gamma2_hat=float(gamma2_hat),
            envelope_violations=int(violations),
            first_envelope_violation_t=first_viol,
            max_v_increase=max_dv,
            v_tolerance=v_tol,
            inactive_phase_regressions=int(regressions),
        ))

    report = RunReport(
        scenario=config.name,
        seed=config.seed,
        dt=config.dt,
        t_end=config.t_end,
        steps=trajectory.num_steps,
        wall_time_s=wall,
        min_lambda_min_q=float(result.lambda_min_hist.min()),
        subsystems=subs,
    )
    return HarnessRun(config=config, trajectory=trajectory, result=result,
                      report=report, tilde_norms=tilde_norms, lyapunov=lyapunov,
                      true_params=true_params)


def trace_header(n: int, m: int, M: int, p: int) -> list[str]:
    cols = ["t", "sigma"]
    cols += [f"x{i + 1}" for i in range(n)]
    cols += [f"u{i + 1}" for i in range(m)]
    for i in range(M):
        cols += [f"theta_hat_{i + 1}_{j + 1}" for j in range(p)]
    cols += [f"theta_tilde_norm_{i + 1}" for i in range(M)]
    cols += [f"V_{i + 1}" for i in range(M)]
    cols += [f"s_{i + 1}" for i in range(M)]
    cols += ["lambda_min_Q"]
    return cols


def write_trace_csv(path, trajectory: Trajectory, result: IdentificationResult,
                    tilde_norms: np.ndarray, lyapunov: np.ndarray,
                    n_rows: int | None = None) -> None:
    """Write the per-sample trace; float cells use shortest round-trip repr."""
    K = trajectory.num_steps if n_rows is None else n_rows - 1
    n, m = trajectory.n, trajectory.m
    M, p = result.theta_hat_hist.shape[1:]
    header = trace_header(n, m, M, p)
    block = np.concatenate([
        trajectory.times[:K + 1, None],
        trajectory.sigma[:K + 1, None].astype(float),
        trajectory.states[:K + 1],
        trajectory.inputs[:K + 1],
        result.theta_hat_hist[:K + 1].reshape(K + 1, M * p),
        tilde_norms[:K + 1],
        lyapunov[:K + 1],
        result.excited_hist[:K + 1].astype(float),
        result.lambda_min_hist[:K + 1, None],
    ], axis=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        sigma_col = 1
        for row in block:
            cells = [repr(v) for v in row.tolist()]
            cells[sigma_col] = str(int(row[sigma_col]))
            writer.writerow(cells)


def run(config: ScenarioConfig, out_dir=None, observer=None) -> HarnessRun:
    """Run a scenario and write ``trace.csv`` and ``report.txt``.

    ``out_dir`` overrides the scenario's configured output directory; when
    neither is set, no files are written.
    """
    target = out_dir or config.out_dir
    try:
        harness_run = run_in_memory(config, observer=observer)
    except DivergenceError as exc:
        partial = getattr(exc, "partial_result", None)
        if partial is not None and target is not None:
            rows = partial.times.shape[0]
            # pre-abort rows may hold astronomically large estimates
            with np.errstate(over="ignore", invalid="ignore"):
                tilde = partial.theta_hat_hist - exc.true_params[None, :, :]
                tilde_norms = np.linalg.norm(tilde, axis=2)
                lyapunov = np.stack([
                    0.5 * np.einsum("kp,pq,kq->k", tilde[:, i],
                                    np.linalg.inv(partial.gains.learning_gain[i]),
                                    tilde[:, i])
                    for i in range(tilde.shape[1])
                ], axis=1)
            write_trace_csv(Path(target) / "trace.csv", exc.trajectory, partial,
                            tilde_norms, lyapunov, n_rows=rows)
            logger.warning("run aborted at t=%.6g; %d partial rows flushed",
                           exc.time, rows)
        raise
    if target is not None:
        target = Path(target)
        write_trace_csv(target / "trace.csv", harness_run.trajectory,
                        harness_run.result, harness_run.tilde_norms,
                        harness_run.lyapunov)
        (target / "report.txt").write_text(harness_run.report.to_text())
        logger.info("wrote %s and %s", target / "trace.csv", target / "report.txt")
    return harness_run


@dataclass(frozen=True)
class CheckCriteria:
    """Thresholds applied by :func:`report_check`."""

    require_detection: bool = True
    require_sigma_match: bool = True
    min_gain_margin: float = 0.0
    max_envelope_violations: int = 0
    psd_floor: float = -1e-9
    max_final_ratio: float = 1e-3
    require_inactive_learning: bool = True


@dataclass(frozen=True)
class CheckItem:
    name: str
    passed: bool
    detail: str


def report_check(report: RunReport,
                 criteria: CheckCriteria = CheckCriteria()) -> list[CheckItem]:
    """Evaluate a run report against pass/fail criteria."""
    items: list[CheckItem] = []

    items.append(CheckItem(
        "information_matrix_psd",
        report.min_lambda_min_q >= criteria.psd_floor,
        f"min lambda_min(Q) = {report.min_lambda_min_q:.3e} "
        f"(floor {criteria.psd_floor:.1e})",
    ))
    for sub in report.subsystems:
        tag = f"subsystem_{sub.index}"
        if criteria.require_detection:
            items.append(CheckItem(
                f"{tag}.detection", sub.detected,
                (f"detected at t={sub.detected_at:.6g}" if sub.detected
                 else "excitation never detected"),
            ))
        if sub.detected and criteria.require_sigma_match:
            items.append(CheckItem(
                f"{tag}.detection_while_active",
                sub.sigma_at_detection == sub.index,
                f"sigma(T) = {sub.sigma_at_detection}",
            ))
        if sub.detected:
            items.append(CheckItem(
                f"{tag}.gain_condition",
                sub.gain_margin >= criteria.min_gain_margin,
                f"margin = {sub.gain_margin:.6g}",
            ))
            env_ok = sub.envelope_violations <= criteria.max_envelope_violations
            detail = f"{sub.envelope_violations} violation(s)"
            if not env_ok:
                detail += f", first at t={sub.first_envelope_violation_t:.6g}"
            items.append(CheckItem(f"{tag}.envelope", env_ok, detail))
            items.append(CheckItem(
                f"{tag}.final_ratio",
                sub.final_ratio < criteria.max_final_ratio,
                f"final/initial = {sub.final_ratio:.3e}",
            ))
            if criteria.require_inactive_learning:
                items.append(CheckItem(
                    f"{tag}.inactive_phase_learning",
                    sub.inactive_phase_regressions == 0,
                    f"{sub.inactive_phase_regressions} non-decreasing phase(s)",
                ))
        items.append(CheckItem(
            f"{tag}.lyapunov_monotone",
            sub.max_v_increase <= sub.v_tolerance,
            f"max step increase = {sub.max_v_increase:.3e} "
            f"(tol {sub.v_tolerance:.1e})",
        ))
    return items
