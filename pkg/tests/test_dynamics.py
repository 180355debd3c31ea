"""Tests for the projectile truth model."""

import numpy as np
import pytest

from difftrack.dynamics import (
    MeasurementModel,
    MotionModel,
    discretize_projectile,
    initial_state,
    measure,
    step_truth,
)
from difftrack.errors import ConfigError


def noiseless_model(delta=0.1, g=10.0):
    return discretize_projectile(delta, g, q_scale=0.0)


def test_transition_matrix_structure():
    m = discretize_projectile(0.1, 10.0)
    f = m.F
    assert f[0, 2] == 0.1 and f[1, 3] == 0.1
    assert np.array_equal(np.diag(f), np.ones(4))
    off = f - np.diag(np.diag(f))
    off[0, 2] = off[1, 3] = 0.0
    assert not off.any()


def test_gravity_input_value():
    m = discretize_projectile(0.1, 10.0)
    assert np.allclose(m.u_g, [0.0, -0.05, 0.0, -1.0], atol=1e-15)


def test_gravity_input_zero_without_gravity():
    m = discretize_projectile(0.1, 0.0)
    assert not m.u_g.any()


def test_transition_determinant_is_one():
    for delta in (0.01, 0.1, 2.0):
        m = discretize_projectile(delta, 9.81)
        assert abs(np.linalg.det(m.F) - 1.0) < 1e-12


def test_noise_parameters_default_to_experiment_values():
    m = discretize_projectile(0.1, 10.0)
    assert np.array_equal(m.G, 0.625 * np.eye(4))
    assert np.array_equal(m.Q, 0.001 * np.eye(4))
    assert np.allclose(m.process_noise_cov, 0.625**2 * 0.001 * np.eye(4))


def test_discretize_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        discretize_projectile(0.0, 10.0)
    with pytest.raises(ConfigError):
        discretize_projectile(-0.1, 10.0)
    with pytest.raises(ConfigError):
        discretize_projectile(0.1, -1.0)


def test_initial_state_values():
    s = initial_state(1.0, 30.0, 15.0, np.pi / 3)
    assert np.array_equal(s[:2], [1.0, 30.0])
    assert abs(s[2] - 7.5) < 1e-12
    assert abs(s[3] - 12.99038105676658) < 1e-11
    assert np.allclose(initial_state(2.0, 3.0, 5.0, 0.0), [2.0, 3.0, 5.0, 0.0])
    assert np.allclose(initial_state(2.0, 3.0, 0.0, 1.0), [2.0, 3.0, 0.0, 0.0])


def test_step_truth_constant_velocity_without_noise():
    m = discretize_projectile(0.1, 0.0, q_scale=0.0)
    rng = np.random.default_rng(0)
    out = step_truth(np.array([0.0, 0.0, 1.0, 1.0]), m, rng)
    assert np.allclose(out, [0.1, 0.1, 1.0, 1.0], atol=1e-15)


def test_step_truth_projectile_step_without_noise():
    m = noiseless_model()
    rng = np.random.default_rng(0)
    out = step_truth(np.array([1.0, 30.0, 7.5, 12.99]), m, rng)
    assert np.allclose(out, [1.75, 31.249, 7.5, 11.99], atol=1e-12)


def test_step_truth_noise_covariance_matches_model():
    m = discretize_projectile(0.1, 10.0)
    rng = np.random.default_rng(42)
    s = np.array([1.0, 30.0, 7.5, 12.99])
    mean = m.F @ s + m.u_g
    draws = np.stack([step_truth(s, m, rng) - mean for _ in range(100_000)])
    sample_cov = np.cov(draws.T)
    target = m.process_noise_cov
    err = np.linalg.norm(sample_cov - target) / np.linalg.norm(target)
    assert err < 0.05


def test_step_truth_bit_reproducible():
    m = discretize_projectile(0.1, 10.0)
    s = np.array([1.0, 30.0, 7.5, 12.99])
    a = step_truth(s, m, np.random.default_rng(7))
    b = step_truth(s, m, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_step_truth_consumes_fixed_draws_even_without_noise():
    # Stream alignment: Q=0 must advance the generator exactly like Q>0.
    s = np.array([0.0, 0.0, 1.0, 1.0])
    rng1 = np.random.default_rng(3)
    step_truth(s, noiseless_model(), rng1)
    rng2 = np.random.default_rng(3)
    step_truth(s, discretize_projectile(0.1, 10.0), rng2)
    assert rng1.standard_normal() == rng2.standard_normal()


def test_vertical_position_matches_closed_form():
    # The discretization is exact: y_k = y0 + vy0*(k*delta) - g*(k*delta)^2/2.
    m = noiseless_model()
    rng = np.random.default_rng(0)
    s = initial_state(1.0, 30.0, 15.0, np.pi / 3)
    y0, vy0 = s[1], s[3]
    state = s
    for k in range(1, 101):
        state = step_truth(state, m, rng)
        t = k * m.delta
        assert abs(state[1] - (y0 + vy0 * t - 0.5 * 10.0 * t * t)) < 1e-9


def test_measure_noiseless_limit():
    s = np.array([1.0, 2.0, 3.0, 4.0])
    mm = MeasurementModel(H=np.eye(4), sigma2=1e-30)
    y = measure(s, mm, np.random.default_rng(0))
    assert np.allclose(y, s, atol=1e-12)


def test_measure_noise_covariance():
    s = np.array([1.0, 2.0, 3.0, 4.0])
    mm = MeasurementModel(H=np.eye(4), sigma2=0.3)
    rng = np.random.default_rng(11)
    draws = np.stack([measure(s, mm, rng) - s for _ in range(100_000)])
    sample_cov = np.cov(draws.T)
    err = np.linalg.norm(sample_cov - mm.R) / np.linalg.norm(mm.R)
    assert err < 0.05


def test_measurement_model_validation():
    with pytest.raises(ConfigError):
        MeasurementModel(H=np.eye(3), sigma2=0.1)
    with pytest.raises(ConfigError):
        MeasurementModel(H=np.eye(4), sigma2=0.0)


def test_motion_model_validation():
    with pytest.raises(ConfigError):
        MotionModel(
            F=np.eye(3),
            G=np.eye(4),
            Q=np.eye(4),
            u_g=np.zeros(4),
            delta=0.1,
            g=10.0,
        )
