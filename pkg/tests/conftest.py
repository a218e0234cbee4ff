"""Shared fixtures: the expensive flagship run is executed once per session
with an instrumented observer; cheaper scenario fixtures are module-scoped."""

import numpy as np
import pytest

from switchid.harness import run_in_memory
from switchid.identify import IdentificationPipeline
from switchid.plant import ExcitationInput, SwitchedPlant, SwitchingSchedule, simulate
from switchid.scenario import flagship_config


class PipelineProbe:
    """Observer collecting identity residuals, the reconstructed filtered
    derivative, and Loewner sandwich margins along a run.

    The observer fires after each step, so every collected quantity refers
    to the step's end time with the step's active subsystem (the value just
    before any switch at that instant).
    """

    def __init__(self, true_params, k_layer2, sandwich_stride=25):
        self.true_params = true_params
        self.k_layer2 = k_layer2
        self.sandwich_stride = sandwich_stride
        self.max_g_residual = 0.0
        self.max_G_residual = 0.0
        self.g_series = None
        self.min_sandwich_upper = np.inf   # lambda_min(acc - Q)
        self.min_sandwich_lower = np.inf   # lambda_min(Q - exp(-k2 (t-t0)) acc)
        self.max_q_asymmetry = 0.0

    def __call__(self, j, pipe):
        traj = pipe.trajectory
        sub = int(traj.sigma[j])
        theta = self.true_params[sub - 1]
        state = pipe.filter_state
        if self.g_series is None:
            self.g_series = np.zeros((traj.num_steps + 1, traj.n))
        self.g_series[j + 1] = state.g_filt

        g_res = float(np.max(np.abs(state.g_filt - state.n_filt @ theta)))
        G_res = float(np.max(np.abs(state.info_vector - state.info_matrix @ theta)))
        self.max_g_residual = max(self.max_g_residual, g_res)
        self.max_G_residual = max(self.max_G_residual, G_res)
        self.max_q_asymmetry = max(
            self.max_q_asymmetry,
            float(np.max(np.abs(state.info_matrix - state.info_matrix.T))),
        )

        if j % self.sandwich_stride == 0:
            t_next = float(traj.times[j + 1])
            t0 = float(traj.times[0])
            acc = pipe.status.gram_accum[sub - 1]
            q = state.info_matrix
            self.min_sandwich_upper = min(
                self.min_sandwich_upper, float(np.linalg.eigvalsh(acc - q)[0])
            )
            decayed = np.exp(-self.k_layer2 * (t_next - t0)) * acc
            self.min_sandwich_lower = min(
                self.min_sandwich_lower, float(np.linalg.eigvalsh(q - decayed)[0])
            )


@pytest.fixture(scope="session")
def flagship():
    """Full 40 s flagship run with the instrumented observer."""
    config = flagship_config()
    plant = config.build_plant()
    probe = PipelineProbe(plant.true_params, config.filter_gains.k_layer2)
    harness_run = run_in_memory(config, observer=probe)
    return harness_run, probe


@pytest.fixture(scope="session")
def flagship_frozen_inactive(flagship):
    """Same flagship trajectory, inactive-phase learning disabled."""
    harness_run, _ = flagship
    config = harness_run.config.replace(learn_inactive=False)
    pipeline = IdentificationPipeline(
        harness_run.trajectory, config.filter_gains, config.estimator_gains(),
        eps_pd=config.eps_pd, learn_inactive=False,
    )
    return pipeline.run()


@pytest.fixture(scope="module")
def short_switching_run():
    """Flagship plant on a 4 s, three-switch schedule (module-scope, cheap)."""
    config = flagship_config().replace(
        t_end=4.0,
        schedule_periodic=None,
        schedule_events=[(1.0, 2), (2.0, 1), (3.0, 2)],
    )
    plant = config.build_plant()
    probe = PipelineProbe(plant.true_params, config.filter_gains.k_layer2,
                          sandwich_stride=10)
    harness_run = run_in_memory(config, observer=probe)
    return harness_run, probe


@pytest.fixture(scope="module")
def single_subsystem_run():
    """One stable subsystem, no switching, 12 s.

    Continuous running never pauses the information-matrix leak, so the
    excitation is stronger than the flagship's to clear the detection
    threshold within the horizon.
    """
    plant = SwitchedPlant.from_matrices([
        ([[0.0, 1.0], [-2.0, -3.0]], [[0.0], [1.0]]),
    ])
    schedule = SwitchingSchedule(t0=0.0, initial_index=1, num_subsystems=1)
    excitation = ExcitationInput.multisine([[2.0, 1.0, 0.6]], [[1.0, 3.0, 7.0]])
    trajectory = simulate(plant, schedule, excitation, t_end=12.0, dt=1e-3)
    return plant, trajectory
