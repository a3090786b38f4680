import dataclasses

import numpy as np
import pytest

from gisnet.config import DataConfig, KalmanConfig, RunConfig
from gisnet.data import generate_synthetic
from gisnet.kalman import CVKalman, cv_kalman_baseline
from gisnet.train import evaluate_baseline


def test_matrices():
    kf = CVKalman(0.2, accel_std=0.5, meas_var=0.1)
    np.testing.assert_array_equal(kf.F[:2, 2:], 0.2 * np.eye(2))
    np.testing.assert_array_equal(kf.R, 0.1 * np.eye(2))
    q = 0.25 * np.array([[0.0004, 0.004], [0.004, 0.04]])
    np.testing.assert_allclose(kf.Q[np.ix_([0, 2], [0, 2])], q, rtol=1e-12)
    np.testing.assert_array_equal(kf.Q[0, 1], 0.0)
    assert np.array_equal(kf.Q, kf.Q.T)


def test_linear_history_extrapolates_exactly():
    dt = DataConfig().dt
    t = np.arange(16) * dt
    track = np.stack([1.0 + 0.3 * t, 20.0 + 14.0 * t], axis=1)
    s = generate_synthetic("cv", 1, 0, noise_std=0.0)[0]
    s = dataclasses.replace(s, history=track[:15] - track[14], future=np.zeros((25, 2)))
    pred = cv_kalman_baseline(s)
    steps = np.arange(1, 26)[:, None] * dt
    np.testing.assert_allclose(pred, steps * np.array([0.3, 14.0]), rtol=0, atol=1e-9)


def test_stationary_history_stays_put():
    s = generate_synthetic("cv", 1, 0, noise_std=0.0)[0]
    s = dataclasses.replace(s, history=np.zeros((15, 2)))
    np.testing.assert_array_equal(cv_kalman_baseline(s), np.zeros((25, 2)))


def test_noiseless_cv_rmse_vanishes():
    report = evaluate_baseline(generate_synthetic("cv", 50, 4, noise_std=0.0), RunConfig())
    assert max(report.rmse) < 1e-6


def test_noisy_cv_rmse_at_five_seconds():
    report = evaluate_baseline(generate_synthetic("cv", 200, 5, noise_std=0.1), RunConfig())
    assert report.rmse[-1] < 0.5
    assert list(report.rmse) == sorted(report.rmse)


def test_filtered_velocity_within_three_sigma():
    rng = np.random.default_rng(0)
    kc = KalmanConfig()
    dt = DataConfig().dt
    inside, trials = 0, 400
    for _ in range(trials):
        v = rng.uniform([-1, 5], [1, 30])
        t = np.arange(15) * dt
        zs = t[:, None] * v + rng.normal(0, 0.1, (15, 2))
        kf = CVKalman(dt, kc.accel_std, kc.meas_var)
        kf.filter(zs)
        sigma = np.sqrt(np.diag(kf.P)[2:])
        inside += np.all(np.abs(kf.x[2:] - v) < 3 * sigma)
    # two components at 3 sigma each: about 99.5% expected
    assert inside / trials > 0.97


def test_deterministic_and_covariance_symmetric():
    s = generate_synthetic("lane-change", 1, 2)[0]
    assert np.array_equal(cv_kalman_baseline(s), cv_kalman_baseline(s))
    kf = CVKalman(0.2)
    kf.filter(s.history)
    np.testing.assert_allclose(kf.P, kf.P.T, rtol=0, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(kf.P) > 0)


@pytest.mark.parametrize("fut", [1, 5, 25])
def test_rollout_length(fut):
    s = generate_synthetic("cv", 1, 0)[0]
    assert cv_kalman_baseline(s, DataConfig(fut_frames=fut)).shape == (fut, 2)
