"""Regressor construction, parameter packing, and the core identity
Y(x, u) theta = A x + B u, checked against direct matrix arithmetic."""

import numpy as np
import pytest

from switchid.regressor import (Dimensions, build_regressor,
                                build_regressor_series, pack_params,
                                predict_derivative, unpack_params)


def test_dimensions_param_dim():
    dims = Dimensions(n=2, m=1, num_subsystems=2)
    assert dims.param_dim == 6
    assert Dimensions(n=3, m=2).param_dim == 15


@pytest.mark.parametrize("bad", [dict(n=0, m=1), dict(n=1, m=-1),
                                 dict(n=2, m=1, num_subsystems=0)])
def test_dimensions_rejects_nonpositive(bad):
    with pytest.raises(ValueError):
        Dimensions(**bad)


def test_build_regressor_hand_example():
    Y = build_regressor([1.0, 2.0], [3.0])
    expected = np.array([
        [1.0, 2.0, 0.0, 0.0, 3.0, 0.0],
        [0.0, 0.0, 1.0, 2.0, 0.0, 3.0],
    ])
    assert np.array_equal(Y, expected)


def test_build_regressor_zero_inputs():
    Y = build_regressor(np.zeros(3), np.zeros(2))
    assert Y.shape == (3, 15)
    assert np.all(Y == 0.0)


def test_build_regressor_sparsity_pattern():
    rng = np.random.default_rng(7)
    n, m = 3, 2
    x, u = rng.standard_normal(n) + 1.0, rng.standard_normal(m) + 1.0
    Y = build_regressor(x, u)
    nonzero = Y != 0.0
    assert nonzero.sum() == n * n + n * m
    for i in range(n):
        assert np.array_equal(Y[i, i * n:(i + 1) * n], x)
        assert np.array_equal(Y[i, n * n + i * m:n * n + (i + 1) * m], u)


def test_build_regressor_linearity():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n, m = rng.integers(1, 5), rng.integers(1, 4)
        x1, x2 = rng.standard_normal((2, n))
        u1, u2 = rng.standard_normal((2, m))
        a, b = rng.standard_normal(2)
        lhs = build_regressor(a * x1 + b * x2, a * u1 + b * u2)
        rhs = a * build_regressor(x1, u1) + b * build_regressor(x2, u2)
        assert np.allclose(lhs, rhs, atol=1e-14)


def test_build_regressor_dimension_mismatch_message():
    dims = Dimensions(n=2, m=1)
    with pytest.raises(ValueError, match=r"expected vector of length 2.*3"):
        build_regressor([1.0, 2.0, 3.0], [0.0], dims)


def test_build_regressor_series_matches_scalar_version():
    rng = np.random.default_rng(3)
    xs = rng.standard_normal((10, 2))
    us = rng.standard_normal((10, 1))
    series = build_regressor_series(xs, us)
    for k in range(10):
        assert np.array_equal(series[k], build_regressor(xs[k], us[k]))


def test_pack_params_identity_case():
    theta = pack_params(np.eye(2), np.zeros((2, 1)))
    assert np.array_equal(theta, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0])


def test_pack_params_hand_example():
    theta = pack_params([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]])
    assert np.array_equal(theta, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


def test_pack_unpack_roundtrip():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n, m = rng.integers(1, 5), rng.integers(1, 4)
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        A2, B2 = unpack_params(pack_params(A, B), Dimensions(n=n, m=m))
        assert np.array_equal(A, A2)
        assert np.array_equal(B, B2)


def test_unpack_hand_examples():
    dims = Dimensions(n=2, m=1)
    A, B = unpack_params([1.0, 0.0, 0.0, 1.0, 0.0, 0.0], dims)
    assert np.array_equal(A, np.eye(2)) and np.all(B == 0)
    A, B = unpack_params([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], dims)
    assert np.array_equal(A, [[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(B, [[5.0], [6.0]])
    A, B = unpack_params(np.zeros(6), dims)
    assert np.all(A == 0) and np.all(B == 0)


def test_unpack_wrong_length():
    with pytest.raises(ValueError, match="length 6"):
        unpack_params(np.zeros(5), Dimensions(n=2, m=1))


def test_predict_derivative_zero_regressor():
    assert np.all(predict_derivative(np.zeros((2, 6)), np.ones(6)) == 0.0)


def test_predict_derivative_hand_example():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    Y = build_regressor([1.0, 2.0], [3.0])
    xdot = predict_derivative(Y, pack_params(A, B))
    assert np.allclose(xdot, [2.0, 2.0], atol=1e-15)


def test_predict_derivative_mismatch():
    with pytest.raises(ValueError):
        predict_derivative(np.zeros((2, 6)), np.zeros(5))


def test_regressor_identity_random_instances():
    # Y(x, u) pack(A, B) must equal A x + B u computed directly.
    rng = np.random.default_rng(42)
    for _ in range(100):
        n, m = rng.integers(1, 6), rng.integers(1, 5)
        x, u = rng.standard_normal(n), rng.standard_normal(m)
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        lhs = predict_derivative(build_regressor(x, u), pack_params(A, B))
        rhs = A @ x + B @ u
        assert np.max(np.abs(lhs - rhs)) < 1e-13
