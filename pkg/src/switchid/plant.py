"""Switched affine plant simulation on a fixed time grid.

The ground-truth system is ``xdot = A_sigma(t) x + B_sigma(t) u(t)`` where
``sigma`` is a piecewise-constant, right-continuous switching signal taking
values in ``1..M``. The state is continuous across switching instants.

Integration is classical fixed-step RK4 with every switching instant forced
onto the sample grid, so the instant just before a switch and the instant of
the switch itself are unambiguous grid samples. Internally each grid step is
taken as two half steps, which also yields accurate state samples at step
midpoints; the downstream filters integrate against those midpoint samples
and therefore retain full fourth-order accuracy without ever touching a
state derivative.

The produced :class:`Trajectory` carries a reference derivative channel
(``xdot_ref``) for tests and oracles only; the identification path never
reads it.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .regressor import Dimensions, pack_params
from .validation import as_matrix, as_vector, require_index, require_positive

__all__ = [
    "SwitchedPlant",
    "SwitchingSchedule",
    "ExcitationInput",
    "Trajectory",
    "GridAlignmentError",
    "DivergenceError",
    "sigma_at",
    "integrate_plant_step",
    "simulate",
]

# Relative slack when deciding whether a time lies on the sample grid.
_GRID_RTOL = 1e-9


class GridAlignmentError(ValueError):
    """A switching event does not coincide with a sample instant."""


class DivergenceError(RuntimeError):
    """A simulated quantity left the finite range."""

    def __init__(self, message: str, time: float, subsystem: int | None = None):
        super().__init__(message)
        self.time = time
        self.subsystem = subsystem


@dataclass(frozen=True)
class SwitchedPlant:
    """Ground-truth subsystem matrices ``(A_i, B_i)`` for ``i = 1..M``."""

    dims: Dimensions
    subsystems: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        if len(self.subsystems) != self.dims.num_subsystems:
            raise ValueError(
                f"expected {self.dims.num_subsystems} subsystem(s), "
                f"got {len(self.subsystems)}"
            )
        checked = []
        for i, (A, B) in enumerate(self.subsystems, start=1):
            A = as_matrix(A, (self.dims.n, self.dims.n), f"A_{i}")
            B = as_matrix(B, (self.dims.n, self.dims.m), f"B_{i}")
            checked.append((A, B))
        object.__setattr__(self, "subsystems", tuple(checked))

    @classmethod
    def from_matrices(cls, matrices) -> "SwitchedPlant":
        """Build from a list of ``(A, B)`` pairs, inferring dimensions."""
        matrices = [(np.asarray(A, dtype=float), np.asarray(B, dtype=float))
                    for A, B in matrices]
        if not matrices:
            raise ValueError("at least one subsystem is required")
        n = matrices[0][0].shape[0]
        m = matrices[0][1].shape[1] if matrices[0][1].ndim == 2 else 1
        dims = Dimensions(n=n, m=m, num_subsystems=len(matrices))
        return cls(dims=dims, subsystems=tuple(matrices))

    @property
    def true_params(self) -> np.ndarray:
        """Stacked parameter vectors, shape (M, p)."""
        return np.array([pack_params(A, B) for A, B in self.subsystems])

    def matrices(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        require_index(index, self.dims.num_subsystems, "subsystem index")
        return self.subsystems[index - 1]


@dataclass(frozen=True)
class SwitchingSchedule:
    """Right-continuous switching signal: ``sigma(t_k)`` is the new index."""

    t0: float
    initial_index: int
    events: tuple[tuple[float, int], ...] = ()
    num_subsystems: int = 1

    def __post_init__(self):
        require_index(self.initial_index, self.num_subsystems, "initial_index")
        prev_t, prev_idx = self.t0, self.initial_index
        for k, (t_k, idx) in enumerate(self.events):
            if t_k <= prev_t:
                raise ValueError(
                    f"events must be strictly increasing and after t0: "
                    f"event {k} at t={t_k} follows t={prev_t}"
                )
            require_index(idx, self.num_subsystems, f"events[{k}] index")
            if idx == prev_idx:
                raise ValueError(
                    f"events[{k}] at t={t_k} does not change the active subsystem ({idx})"
                )
            prev_t, prev_idx = t_k, idx
        object.__setattr__(
            self, "events", tuple((float(t), int(i)) for t, i in self.events)
        )

    @classmethod
    def periodic(cls, order, dwell: float, t0: float, t_end: float) -> "SwitchingSchedule":
        """Cycle through ``order`` with a fixed dwell, events inside (t0, t_end)."""
        order = [int(i) for i in order]
        if len(order) < 1:
            raise ValueError("periodic order must name at least one subsystem")
        require_positive(dwell, "dwell")
        events = []
        t, pos = t0 + dwell, 1
        while t < t_end - 1e-12:
            nxt = order[pos % len(order)]
            events.append((t, nxt))
            t += dwell
            pos += 1
        return cls(
            t0=t0,
            initial_index=order[0],
            events=tuple(events),
            num_subsystems=max(order),
        )

    def event_times(self) -> np.ndarray:
        return np.array([t for t, _ in self.events])


def sigma_at(schedule: SwitchingSchedule, t: float) -> int:
    """Active subsystem index at time ``t`` (right-continuous)."""
    if t < schedule.t0:
        raise ValueError(f"t={t} precedes schedule start t0={schedule.t0}")
    times = [ev[0] for ev in schedule.events]
    k = bisect.bisect_right(times, t)
    if k == 0:
        return schedule.initial_index
    return schedule.events[k - 1][1]


@dataclass(frozen=True)
class ExcitationInput:
    """Deterministic input signal ``u(t)``, evaluable at scalar or array times.

    ``multisine`` sums ``a sin(w t + phi)`` per channel; ``constant`` and
    ``zero`` are what they say; ``piecewise`` holds a constant vector between
    breakpoints (right-continuous).
    """

    kind: str
    m: int
    amplitudes: tuple = ()
    frequencies: tuple = ()
    phases: tuple = ()
    constant_value: tuple = ()
    breakpoints: tuple = ()
    values: tuple = ()

    @classmethod
    def zero(cls, m: int) -> "ExcitationInput":
        return cls(kind="zero", m=m)

    @classmethod
    def constant(cls, value) -> "ExcitationInput":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(kind="constant", m=value.shape[0], constant_value=tuple(value))

    @classmethod
    def multisine(cls, amplitudes, frequencies, phases=None) -> "ExcitationInput":
        """Per-channel lists of amplitudes/frequencies/phases (rad/s)."""
        amps = [tuple(float(a) for a in chan) for chan in amplitudes]
        freqs = [tuple(float(w) for w in chan) for chan in frequencies]
        if phases is None:
            phs = [tuple(0.0 for _ in chan) for chan in amps]
        else:
            phs = [tuple(float(p) for p in chan) for chan in phases]
        if not (len(amps) == len(freqs) == len(phs)):
            raise ValueError("per-channel lists must agree in channel count")
        for c, (a, w, p) in enumerate(zip(amps, freqs, phs)):
            if not (len(a) == len(w) == len(p)):
                raise ValueError(f"channel {c}: amplitudes/frequencies/phases lengths differ")
        return cls(kind="multisine", m=len(amps), amplitudes=tuple(amps),
                   frequencies=tuple(freqs), phases=tuple(phs))

    @classmethod
    def piecewise(cls, breakpoints, values) -> "ExcitationInput":
        """Right-continuous steps: value[k] holds on [breakpoints[k], breakpoints[k+1])."""
        bps = tuple(float(t) for t in breakpoints)
        vals = tuple(tuple(float(v) for v in np.atleast_1d(v)) for v in values)
        if len(bps) != len(vals):
            raise ValueError("piecewise needs one value vector per breakpoint")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("piecewise breakpoints must be strictly increasing")
        m = len(vals[0]) if vals else 1
        if any(len(v) != m for v in vals):
            raise ValueError("piecewise value vectors must share one length")
        return cls(kind="piecewise", m=m, breakpoints=bps, values=vals)

    @property
    def bound(self) -> float:
        """A priori bound on ``max_t |u(t)|`` per channel (max over channels)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return float(np.max(np.abs(self.constant_value)))
        if self.kind == "multisine":
            return float(max(sum(abs(a) for a in chan) for chan in self.amplitudes))
        return float(np.max(np.abs(self.values))) if self.values else 0.0

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        out = np.zeros((tt.shape[0], self.m))
        if self.kind == "constant":
            out[:] = np.asarray(self.constant_value)
        elif self.kind == "multisine":
            for c in range(self.m):
                acc = np.zeros_like(tt)
                for a, w, p in zip(self.amplitudes[c], self.frequencies[c], self.phases[c]):
                    acc += a * np.sin(w * tt + p)
                out[:, c] = acc
        elif self.kind == "piecewise":
            idx = np.searchsorted(np.asarray(self.breakpoints), tt, side="right") - 1
            vals = np.asarray(self.values)
            out[idx >= 0] = vals[idx[idx >= 0]]
        elif self.kind != "zero":
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        return out[0] if scalar else out


@dataclass(frozen=True)
class Trajectory:
    """Simulated run on a uniform grid, plus midpoint samples.

    ``xdot_ref`` / ``xdot_ref_mid`` are reference derivative channels for
    validation only; identification consumes states, inputs and sigma.
    All arrays are locked read-only so a trajectory can be shared freely.
    """

    dt: float
    times: np.ndarray          # (K+1,)
    states: np.ndarray         # (K+1, n)
    inputs: np.ndarray         # (K+1, m)
    sigma: np.ndarray          # (K+1,) int
    states_mid: np.ndarray     # (K, n) at t + dt/2
    inputs_mid: np.ndarray     # (K, m)
    xdot_ref: np.ndarray       # (K+1, n)
    xdot_ref_mid: np.ndarray   # (K, n)

    def __post_init__(self):
        for name in ("times", "states", "inputs", "sigma",
                     "states_mid", "inputs_mid", "xdot_ref", "xdot_ref_mid"):
            getattr(self, name).setflags(write=False)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def num_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def num_subsystems(self) -> int:
        return int(self.sigma.max())


def _grid_index(t: float, t0: float, dt: float) -> int | None:
    """Index of ``t`` on the grid ``t0 + k dt`` or None if off-grid."""
    k = round((t - t0) / dt)
    if abs(t0 + k * dt - t) <= _GRID_RTOL * max(1.0, abs(t)):
        return int(k)
    return None


def _rk4_step(A: np.ndarray, B: np.ndarray, x: np.ndarray,
              u0: np.ndarray, um: np.ndarray, u1: np.ndarray, h: float) -> np.ndarray:
    k1 = A @ x + B @ u0
    k2 = A @ (x + 0.5 * h * k1) + B @ um
    k3 = A @ (x + 0.5 * h * k2) + B @ um
    k4 = A @ (x + h * k3) + B @ u1
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_plant_step(plant: SwitchedPlant, schedule: SwitchingSchedule,
                         excitation: ExcitationInput, t: float, x, dt: float) -> np.ndarray:
    """One classical RK4 step of the active subsystem over ``[t, t+dt]``.

    The step interior must not contain a switching event; events belong on
    the sample grid by construction.
    """
    require_positive(dt, "dt")
    x = as_vector(x, plant.dims.n, "x")
    for t_k, _ in schedule.events:
        if t < t_k < t + dt and not np.isclose(t_k, t + dt, rtol=0, atol=_GRID_RTOL * dt):
            raise GridAlignmentError(
                f"switching event at t={t_k} lies strictly inside step [{t}, {t + dt}]"
            )
    A, B = plant.matrices(sigma_at(schedule, t))
    u0 = np.atleast_1d(excitation(t))
    um = np.atleast_1d(excitation(t + 0.5 * dt))
    u1 = np.atleast_1d(excitation(t + dt))
    return _rk4_step(A, B, x, u0, um, u1, dt)


def simulate(plant: SwitchedPlant, schedule: SwitchingSchedule,
             excitation: ExcitationInput, t_end: float, dt: float,
             x0=None) -> Trajectory:
    """Simulate the switched plant over ``[t0, t_end]`` on a ``dt`` grid.

    Every switching event and ``t_end`` itself must lie on the grid. Each
    grid step is integrated as two RK4 half steps so midpoint states are
    recorded alongside the grid samples.
    """
    dims = plant.dims
    require_positive(dt, "dt")
    t0 = schedule.t0
    if t_end <= t0:
        raise ValueError(f"t_end={t_end} must exceed t0={t0}")
    K = _grid_index(t_end, t0, dt)
    if K is None or K < 1:
        raise GridAlignmentError(f"t_end={t_end} does not lie on the dt={dt} grid")
    for t_k, _ in schedule.events:
        idx = _grid_index(t_k, t0, dt)
        if idx is None:
            raise GridAlignmentError(f"off-grid event: t={t_k} with dt={dt}")
        if not 0 < idx < K:
            raise ValueError(f"event at t={t_k} outside the open interval (t0, t_end)")
    if excitation.m != dims.m:
        raise ValueError(
            f"excitation has {excitation.m} channel(s), plant expects {dims.m}"
        )

    x = np.zeros(dims.n) if x0 is None else as_vector(x0, dims.n, "x0")

    times = t0 + dt * np.arange(K + 1)
    mid_times = times[:-1] + 0.5 * dt
    # Half-step RK4 needs the input at quarter points of each grid step.
    us = excitation(times)
    us_mid = excitation(mid_times)
    us_q1 = excitation(times[:-1] + 0.25 * dt)
    us_q3 = excitation(times[:-1] + 0.75 * dt)

    sigma = np.empty(K + 1, dtype=np.int64)
    sigma[:] = schedule.initial_index
    for t_k, idx in schedule.events:
        sigma[_grid_index(t_k, t0, dt):] = idx

    states = np.empty((K + 1, dims.n))
    states_mid = np.empty((K, dims.n))
    states[0] = x
    h = 0.5 * dt
    mats = [plant.matrices(i + 1) for i in range(dims.num_subsystems)]
    # overflow is caught explicitly below; silence the intermediate warning
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(K):
            A, B = mats[sigma[j] - 1]
            xm = _rk4_step(A, B, states[j], us[j], us_q1[j], us_mid[j], h)
            x1 = _rk4_step(A, B, xm, us_mid[j], us_q3[j], us[j + 1], h)
            if not np.all(np.isfinite(x1)):
                raise DivergenceError(
                    f"state diverged at t={times[j + 1]:.6g} (subsystem {sigma[j]})",
                    time=float(times[j + 1]),
                    subsystem=int(sigma[j]),
                )
            states_mid[j] = xm
            states[j + 1] = x1

    # Reference derivative channels, computed from the true matrices.
    xdot_ref = np.empty_like(states)
    xdot_ref_mid = np.empty_like(states_mid)
    for i in range(dims.num_subsystems):
        A, B = mats[i]
        mask = sigma == i + 1
        xdot_ref[mask] = states[mask] @ A.T + us[mask] @ B.T
        mask_step = sigma[:-1] == i + 1
        xdot_ref_mid[mask_step] = states_mid[mask_step] @ A.T + us_mid[mask_step] @ B.T

    return Trajectory(
        dt=dt, times=times, states=states, inputs=us, sigma=sigma,
        states_mid=states_mid, inputs_mid=us_mid,
        xdot_ref=xdot_ref, xdot_ref_mid=xdot_ref_mid,
    )
