import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec

from etgsim.sod_kalman import (
    SodKalmanFilter,
    SodSampler,
    discretize_process_noise,
    inflate_noise,
    matrix_exponential,
    should_send,
)


def test_sampler_fires_first_time():
    assert should_send(SodSampler(1.0), 0.0)


def test_sampler_band_is_strict():
    s = SodSampler(0.5)
    s.record(10.0, 0.0)
    assert not should_send(s, 10.5)
    assert not should_send(s, 9.5)
    assert should_send(s, 10.5000001)
    assert should_send(s, 9.4)


def test_zero_delta_fires_on_any_change():
    s = SodSampler(0.0)
    s.record(1.0, 0.0)
    assert not should_send(s, 1.0)
    assert should_send(s, 1.0 + 1e-12)


def test_negative_delta_rejected():
    with pytest.raises(ValueError):
        SodSampler(-0.1)


def test_inflate_noise_examples():
    r = np.eye(2)
    np.testing.assert_allclose(inflate_noise(r, [True, True], [0.3, 0.3]), r)
    np.testing.assert_allclose(inflate_noise(r, [False, True], [0.3, 0.3]), np.diag([1.03, 1.0]))
    with pytest.raises(ValueError):
        inflate_noise(np.zeros((1, 1)), [False], [1.0])


@pytest.mark.parametrize("seed", range(10))
def test_matrix_exponential_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(5, 5)) * rng.uniform(0.1, 3.0)
    np.testing.assert_allclose(matrix_exponential(m), scipy.linalg.expm(m), rtol=1e-10, atol=1e-12)


def test_van_loan_matches_quadrature():
    a = np.array([[-1.0, 0.5], [0.0, -2.0]])
    q = np.array([[0.3, 0.1], [0.1, 0.2]])
    t = 0.7
    ref, _ = quad_vec(lambda s: scipy.linalg.expm(a * s) @ q @ scipy.linalg.expm(a * s).T, 0.0, t, epsabs=1e-13)
    np.testing.assert_allclose(discretize_process_noise(a, q, t), ref, atol=1e-10)


def test_van_loan_random_walk_is_q_times_t():
    q = np.diag([0.1, 0.2])
    np.testing.assert_allclose(discretize_process_noise(np.zeros((2, 2)), q, 2.0), 2 * q)


def _textbook(a, c, q, r, t, x0, p0, ys):
    """Plain discrete KF: update with every measurement, then predict."""
    phi = scipy.linalg.expm(a * t)
    qd = discretize_process_noise(a, q, t)
    x, p = x0.copy(), p0.copy()
    out = []
    for y in ys:
        s = c @ p @ c.T + r
        k = p @ c.T @ np.linalg.inv(s)
        x = x + k @ (y - c @ x)
        p = (np.eye(len(x)) - k @ c) @ p
        out.append(x.copy())
        x = phi @ x
        p = phi @ p @ phi.T + qd
    return np.array(out)


@pytest.mark.parametrize("seed", range(100))
def test_zero_delta_with_every_sample_reduces_to_textbook_filter(seed):
    rng = np.random.default_rng(seed)
    a = np.array([[0.0, 1.0], [-0.5, -0.2]])
    c = np.array([[1.0, 0.0]])
    q = np.diag([0.01, 0.02])
    r = np.array([[0.5]])
    ys = rng.normal(size=(1000, 1))
    x0 = np.zeros(2)
    p0 = np.eye(2)
    f = SodKalmanFilter(a, c, q, r, 0.1, [0.0], x0, p0)
    got = np.array([f.step([(0, float(y[0]))]) for y in ys])
    ref = _textbook(a, c, q, r, 0.1, x0, p0, ys)
    np.testing.assert_allclose(got, ref, atol=1e-9)


def test_covariance_stays_psd_over_long_run():
    rng = np.random.default_rng(1)
    f = SodKalmanFilter(np.zeros((2, 2)), np.eye(2), 0.1 * np.eye(2), np.eye(2), 1.0, [0.5, 0.5], np.zeros(2),
                        100 * np.eye(2))
    for k in range(100_000):
        received = [(0, rng.normal())] if k % 7 == 0 else []
        f.step(received)
    assert np.linalg.eigvalsh(f.p_cov).min() >= 0.0
    assert np.allclose(f.p_cov, f.p_cov.T)


def _steady_variance(delta):
    f = SodKalmanFilter([[0.0]], [[1.0]], [[0.1]], [[1.0]], 1.0, [delta], [0.0], [[100.0]])
    for _ in range(500):
        f.step([])
    return f.p_cov[0, 0]


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.0, max_value=5.0), st.floats(min_value=0.0, max_value=5.0))
def test_posterior_variance_monotone_in_delta(d1, d2):
    lo, hi = sorted((d1, d2))
    assert _steady_variance(lo) <= _steady_variance(hi) + 1e-12


def test_silent_channel_holds_last_value():
    f = SodKalmanFilter([[0.0]], [[1.0]], [[0.1]], [[1.0]], 1.0, [0.01], [0.0], [[100.0]])
    f.step([(0, 5.0)])
    for _ in range(200):
        x = f.step([])
    assert x[0] == pytest.approx(5.0, abs=1e-6)


def test_bad_channel_index():
    f = SodKalmanFilter([[0.0]], [[1.0]], [[0.1]], [[1.0]], 1.0, [0.1], [0.0], [[1.0]])
    with pytest.raises(IndexError):
        f.step([(1, 0.0)])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(r_cov=[[0.0]]),
        dict(period=0.0),
        dict(c_mat=[[1.0, 0.0]]),
    ],
)
def test_invalid_filter_arguments(kwargs):
    base = dict(a_mat=[[0.0]], c_mat=[[1.0]], q_cov=[[0.1]], r_cov=[[1.0]], period=1.0, deltas=[0.1], x0=[0.0],
                p0=[[1.0]])
    base.update(kwargs)
    with pytest.raises(ValueError):
        SodKalmanFilter(**base)
