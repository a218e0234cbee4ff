"""Dual-layer low-pass filters with per-subsystem memory stacks.

Layer 1 filters the regressor and the state with a stable first-order lag
of bandwidth ``k1``:

    Nf' = -k1 Nf + Y(x, u)          Nf(t0) = 0      (filtered regressor)
    hf' = -k1 hf + x                hf(t0) = 0      (filtered state)

The filtered state derivative ``gf`` (the output of ``gf' = -k1 gf + xdot``)
is never integrated from a derivative measurement. Integrating its
variation-of-constants form by parts gives, on any inter-switch window
starting at the anchor time ``ta``,

    gf(t) = x(t) - k1 hf(t) + e^{-k1 (t - ta)} (gf(ta) - x(ta) + k1 hf(ta))

which needs only the measurable state and the ``hf`` filter. Layer 2
accumulates the information carried by layer 1 with bandwidth ``k2``:

    Qf' = -k2 Qf + Nf^T Nf          Qf(t0) = 0      (information matrix)
    Gf' = -k2 Gf + Nf^T gf          Gf(t0) = 0      (information vector)

Because ``xdot = Y theta_sigma`` along the true trajectory and the
per-subsystem memory stacks store/restore all filter values at switch
instants, the identities ``gf = Nf theta_sigma`` and ``Gf = Qf theta_sigma``
hold for all time, across arbitrary switching. ``Qf`` is symmetric positive
semi-definite for all time.

At a switching instant ``tk`` the filter values just before the switch are
written to the outgoing subsystem's stack slot, the state is overwritten
from the incoming subsystem's slot (zeros if never active), and the
reconstruction anchor is reset to ``tk``.

All stepping uses classical RK4 on the shared grid; the regressor and state
forcing are supplied at the step endpoints and midpoint, so the filters
retain fourth-order accuracy. Stage values are returned because the
estimator bank integrates against the same stages.

State objects are plain mutable values owned by a single stepping loop;
share only completed snapshots across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .regressor import Dimensions
from .validation import require_index, require_positive

__all__ = [
    "FilterGains",
    "FilterBankState",
    "MemoryStacks",
    "StepForcing",
    "FilterStages",
    "reconstruct_g",
    "layer1_step",
    "layer2_step",
    "on_switch",
]


@dataclass(frozen=True)
class FilterGains:
    """First/second layer lag bandwidths (1/s), both strictly positive."""

    k_layer1: float
    k_layer2: float

    def __post_init__(self):
        require_positive(self.k_layer1, "k_layer1")
        require_positive(self.k_layer2, "k_layer2")


@dataclass
class FilterBankState:
    """Current filter values plus the reconstruction anchor.

    The anchor records time, state, and the restored ``gf``/``hf`` at the
    most recent reset (start of run or switch instant); the derivative-free
    reconstruction of ``gf`` is relative to it.
    """

    n_filt: np.ndarray        # (n, p) filtered regressor
    h_filt: np.ndarray        # (n,)  filtered state
    g_filt: np.ndarray        # (n,)  reconstructed filtered derivative (cache)
    info_matrix: np.ndarray   # (p, p) symmetric PSD
    info_vector: np.ndarray   # (p,)
    t_anchor: float
    x_anchor: np.ndarray      # (n,)
    g_anchor: np.ndarray      # (n,)
    h_anchor: np.ndarray      # (n,)

    @classmethod
    def initial(cls, dims: Dimensions, t0: float, x0) -> "FilterBankState":
        n, p = dims.n, dims.param_dim
        x0 = np.asarray(x0, dtype=float).copy()
        return cls(
            n_filt=np.zeros((n, p)),
            h_filt=np.zeros(n),
            g_filt=np.zeros(n),
            info_matrix=np.zeros((p, p)),
            info_vector=np.zeros(p),
            t_anchor=float(t0),
            x_anchor=x0,
            g_anchor=np.zeros(n),
            h_anchor=np.zeros(n),
        )


@dataclass
class MemoryStacks:
    """Per-subsystem storage of filter values captured at switch-out.

    Slot ``i`` (1-based) is written only when subsystem ``i`` switches out
    and read only when it switches back in. All slots start at zero.
    """

    regressor: np.ndarray     # (M, n, p)
    xdot: np.ndarray          # (M, n)
    state: np.ndarray         # (M, n)
    info_matrix: np.ndarray   # (M, p, p)
    info_vector: np.ndarray   # (M, p)
    last_store_time: np.ndarray = field(default=None)  # (M,) diagnostics

    def __post_init__(self):
        if self.last_store_time is None:
            self.last_store_time = np.full(self.regressor.shape[0], np.nan)

    @classmethod
    def zeros(cls, dims: Dimensions) -> "MemoryStacks":
        M, n, p = dims.num_subsystems, dims.n, dims.param_dim
        return cls(
            regressor=np.zeros((M, n, p)),
            xdot=np.zeros((M, n)),
            state=np.zeros((M, n)),
            info_matrix=np.zeros((M, p, p)),
            info_vector=np.zeros((M, p)),
        )

    @property
    def num_subsystems(self) -> int:
        return self.regressor.shape[0]


@dataclass(frozen=True)
class StepForcing:
    """Exogenous samples driving one RK4 step over ``[t, t+dt]``."""

    t: float
    x0: np.ndarray
    xm: np.ndarray
    x1: np.ndarray
    Y0: np.ndarray
    Ym: np.ndarray
    Y1: np.ndarray


@dataclass(frozen=True)
class FilterStages:
    """Stage values of one RK4 step, consumed by the estimator bank.

    Entries are the four classical stage evaluations (t, t+dt/2, t+dt/2,
    t+dt). ``nn_increment`` is the matching fourth-order quadrature of
    ``Nf^T Nf dt`` over the step, used by the excitation monitor.
    """

    n_filt: tuple        # 4 x (n, p)
    g_filt: tuple        # 4 x (n,)
    info_matrix: tuple   # 4 x (p, p)
    info_vector: tuple   # 4 x (p,)
    nn_increment: np.ndarray


def reconstruct_g(state: FilterBankState, x_now, t_now: float,
                  gains: FilterGains) -> np.ndarray:
    """Derivative-free value of the filtered state derivative at ``t_now``.

    Evaluates the integration-by-parts form relative to the current anchor;
    bit-identical inputs give bit-identical outputs.
    """
    if t_now < state.t_anchor - 1e-12:
        raise ValueError(
            f"t_now={t_now} precedes the reconstruction anchor t={state.t_anchor}"
        )
    k1 = gains.k_layer1
    decay = np.exp(-k1 * (t_now - state.t_anchor))
    combo = state.g_anchor - state.x_anchor + k1 * state.h_anchor
    return np.asarray(x_now, dtype=float) - k1 * state.h_filt + decay * combo


def layer1_step(state: FilterBankState, forcing: StepForcing,
                gains: FilterGains, dt: float):
    """Advance ``Nf`` and ``hf`` one RK4 step; refresh the ``gf`` cache.

    Returns the layer-1 stage values needed by :func:`layer2_step`.
    """
    k1 = gains.k_layer1
    half = 0.5 * dt
    t_rel = forcing.t - state.t_anchor
    e0 = np.exp(-k1 * t_rel)
    em = np.exp(-k1 * (t_rel + half))
    e1 = np.exp(-k1 * (t_rel + dt))
    combo = state.g_anchor - state.x_anchor + k1 * state.h_anchor

    N, h = state.n_filt, state.h_filt
    dN1 = forcing.Y0 - k1 * N
    dh1 = forcing.x0 - k1 * h
    N2 = N + half * dN1
    h2 = h + half * dh1
    dN2 = forcing.Ym - k1 * N2
    dh2 = forcing.xm - k1 * h2
    N3 = N + half * dN2
    h3 = h + half * dh2
    dN3 = forcing.Ym - k1 * N3
    dh3 = forcing.xm - k1 * h3
    N4 = N + dt * dN3
    h4 = h + dt * dh3
    dN4 = forcing.Y1 - k1 * N4
    dh4 = forcing.x1 - k1 * h4

    g1 = forcing.x0 - k1 * h + e0 * combo
    g2 = forcing.xm - k1 * h2 + em * combo
    g3 = forcing.xm - k1 * h3 + em * combo
    g4 = forcing.x1 - k1 * h4 + e1 * combo

    state.n_filt = N + (dt / 6.0) * (dN1 + 2.0 * (dN2 + dN3) + dN4)
    state.h_filt = h + (dt / 6.0) * (dh1 + 2.0 * (dh2 + dh3) + dh4)
    state.g_filt = forcing.x1 - k1 * state.h_filt + e1 * combo
    if not np.isfinite(state.h_filt).all():
        raise ValueError(f"layer-1 filter state non-finite at t={forcing.t + dt}")
    return (N, N2, N3, N4), (g1, g2, g3, g4)


def layer2_step(state: FilterBankState, l1_n, l1_g,
                gains: FilterGains, dt: float) -> FilterStages:
    """Advance ``Qf`` and ``Gf`` one RK4 step against the layer-1 stages.

    ``Qf`` is re-symmetrized after the step to stop floating-point drift from
    eroding its positive semi-definiteness. Also produces the fourth-order
    ``Nf^T Nf`` quadrature increment for the excitation monitor.
    """
    k2 = gains.k_layer2
    half = 0.5 * dt
    N1, N2, N3, N4 = l1_n
    g1, g2, g3, g4 = l1_g
    nn1 = N1.T @ N1
    nn2 = N2.T @ N2
    nn3 = N3.T @ N3
    nn4 = N4.T @ N4

    Q, G = state.info_matrix, state.info_vector
    dQ1 = nn1 - k2 * Q
    dG1 = N1.T @ g1 - k2 * G
    Q2 = Q + half * dQ1
    G2 = G + half * dG1
    dQ2 = nn2 - k2 * Q2
    dG2 = N2.T @ g2 - k2 * G2
    Q3 = Q + half * dQ2
    G3 = G + half * dG2
    dQ3 = nn3 - k2 * Q3
    dG3 = N3.T @ g3 - k2 * G3
    Q4 = Q + dt * dQ3
    G4 = G + dt * dG3
    dQ4 = nn4 - k2 * Q4
    dG4 = N4.T @ g4 - k2 * G4

    q_new = Q + (dt / 6.0) * (dQ1 + 2.0 * (dQ2 + dQ3) + dQ4)
    state.info_matrix = 0.5 * (q_new + q_new.T)
    state.info_vector = G + (dt / 6.0) * (dG1 + 2.0 * (dG2 + dG3) + dG4)

    nn_increment = (dt / 6.0) * (nn1 + 2.0 * (nn2 + nn3) + nn4)
    return FilterStages(
        n_filt=(N1, N2, N3, N4),
        g_filt=(g1, g2, g3, g4),
        info_matrix=(Q, Q2, Q3, Q4),
        info_vector=(G, G2, G3, G4),
        nn_increment=nn_increment,
    )


def on_switch(state: FilterBankState, stacks: MemoryStacks,
              outgoing: int, incoming: int, t_k: float, x_at_tk) -> None:
    """Store-then-restore at a switching instant.

    The current filter values (the pre-switch values, since integration
    stops exactly at ``t_k``) go into the outgoing subsystem's stack slot;
    the filter state is overwritten from the incoming slot; the
    reconstruction anchor moves to ``t_k`` with the restored values.
    """
    M = stacks.num_subsystems
    require_index(outgoing, M, "outgoing")
    require_index(incoming, M, "incoming")
    if outgoing == incoming:
        raise ValueError(f"switch must change the subsystem (got {outgoing} -> {incoming})")
    out = outgoing - 1
    inc = incoming - 1

    stacks.regressor[out] = state.n_filt
    stacks.xdot[out] = state.g_filt
    stacks.state[out] = state.h_filt
    stacks.info_matrix[out] = state.info_matrix
    stacks.info_vector[out] = state.info_vector
    stacks.last_store_time[out] = t_k

    state.n_filt = stacks.regressor[inc].copy()
    state.g_filt = stacks.xdot[inc].copy()
    state.h_filt = stacks.state[inc].copy()
    state.info_matrix = stacks.info_matrix[inc].copy()
    state.info_vector = stacks.info_vector[inc].copy()
    state.t_anchor = float(t_k)
    state.x_anchor = np.asarray(x_at_tk, dtype=float).copy()
    state.g_anchor = state.g_filt.copy()
    state.h_anchor = state.h_filt.copy()
