import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import sqrtm
from scipy.special import gammaln, multigammaln

from ggiw_pmbm.ggiw import (
    GGIWParams,
    MotionModel,
    SensorModel,
    WeightedGGIW,
    expected_values,
    gamma_mixture_reduce,
    ggiw_kld,
    ggiw_logpdf,
    ggiw_mixture_reduce,
    ggiw_predict,
    ggiw_sample,
    ggiw_update,
    log_neg_detection,
    neg_detection_factors,
)
from conftest import random_ggiw, simple_ggiw


def reference_update(z, W, H):
    """Straight transcription of the update with scipy primitives."""
    W = np.atleast_2d(W)
    n, d = W.shape
    zbar = W.mean(axis=0)
    Z = (W - zbar).T @ (W - zbar)
    Xhat = z.V / (z.v - 2 * d - 2)
    eps = zbar - H @ z.m
    S = H @ z.P @ H.T + Xhat / n
    K = z.P @ H.T @ np.linalg.inv(S)
    Xh, Si = np.real(sqrtm(Xhat)), np.real(sqrtm(np.linalg.inv(S)))
    N = Xh @ Si @ np.outer(eps, eps) @ Si.T @ Xh.T
    a, b, v, V = z.alpha + n, z.beta + 1, z.v + n, z.V + N + Z
    ld = lambda M: np.linalg.slogdet(M)[1]
    log_l = (
        -0.5 * d * n * math.log(math.pi)
        - 0.5 * d * math.log(n)
        + 0.5 * (z.v - d - 1) * ld(z.V)
        - 0.5 * (v - d - 1) * ld(V)
        + multigammaln(0.5 * (v - d - 1), d)
        - multigammaln(0.5 * (z.v - d - 1), d)
        + 0.5 * ld(Xhat)
        - 0.5 * ld(S)
        + gammaln(a)
        - gammaln(z.alpha)
        + z.alpha * math.log(z.beta)
        - a * math.log(b)
    )
    return GGIWParams(a, b, z.m + K @ eps, z.P - K @ S @ K.T, v, V), log_l


H = np.hstack([np.eye(2), np.zeros((2, 2))])


def test_predict_zero_elapsed_time():
    z = simple_ggiw(3.0, -1.0)
    out = ggiw_predict(z, MotionModel(Ts=0.0, sigma_a=0.5, eta=1.0))
    assert out.v == z.v and np.array_equal(out.V, z.V) and np.array_equal(out.m, z.m)


def test_predict_rate_forgetting():
    z = GGIWParams(10.0, 2.0, np.zeros(4), np.eye(4), 12.0, 6 * np.eye(2))
    out = ggiw_predict(z, MotionModel(eta=1.25))
    assert out.alpha == pytest.approx(8.0) and out.beta == pytest.approx(1.6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 5.0), st.floats(0.5, 50.0))
def test_predict_keeps_expected_extent(seed, Ts, tau):
    z = random_ggiw(np.random.default_rng(seed))
    out = ggiw_predict(z, MotionModel(Ts=Ts, tau=tau))
    assert out.v > 6
    assert np.allclose(out.V / (out.v - 6), z.V / (z.v - 6), rtol=1e-12, atol=0)


def test_predict_kinematics():
    z = simple_ggiw()
    z = GGIWParams(z.alpha, z.beta, np.array([1.0, 2.0, 3.0, 4.0]), z.P, z.v, z.V)
    mm = MotionModel(Ts=2.0, sigma_a=0.0)
    out = ggiw_predict(z, mm)
    assert np.allclose(out.m, [7.0, 10.0, 3.0, 4.0])
    assert np.allclose(out.P, mm.F @ z.P @ mm.F.T)


def test_update_counts():
    z = GGIWParams(5.0, 1.0, np.zeros(4), np.eye(4), 10.0, 4 * np.eye(2))
    W = np.array([[0.1, 0.2], [-0.3, 0.5], [1.0, -1.0]])
    out, _ = ggiw_update(z, W, H)
    assert (out.alpha, out.beta, out.v) == (8.0, 2.0, 13.0)


def test_update_zero_innovation():
    z = simple_ggiw(2.0, 3.0)
    out, _ = ggiw_update(z, np.array([[2.0, 3.0]]), H)
    assert np.allclose(out.m, z.m, atol=1e-14)
    assert np.allclose(out.V, z.V, atol=1e-14)


def test_update_rejects_empty_set():
    with pytest.raises(ValueError):
        ggiw_update(simple_ggiw(), np.zeros((0, 2)), H)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_update_matches_reference(seed, n):
    rng = np.random.default_rng(seed)
    z = random_ggiw(rng)
    W = rng.normal(loc=z.m[:2], scale=2.0, size=(n, 2))
    got, ll = ggiw_update(z, W, H)
    ref, ll_ref = reference_update(z, W, H)
    assert ll == pytest.approx(ll_ref, rel=1e-9, abs=1e-9)
    for a, b in [(got.m, ref.m), (got.P, ref.P), (got.V, ref.V)]:
        assert np.allclose(a, b, rtol=1e-9, atol=1e-10)


def test_update_frozen_value():
    z = GGIWParams(10.0, 1.0, np.array([0.0, 0.0, 1.0, 0.0]), np.diag([1.0, 2.0, 0.5, 0.5]),
                   9.0, np.array([[6.0, 1.0], [1.0, 3.0]]))
    W = np.array([[0.5, 0.2], [1.5, -0.4], [0.3, 1.1]])
    _, ll = ggiw_update(z, W, H)
    assert ll == pytest.approx(-10.498649872122357, abs=1e-9)


def test_expected_values():
    z = GGIWParams(20.0, 2.0, np.zeros(4), np.eye(4), 8.0, 2 * np.eye(2))
    rate, m, X = expected_values(z)
    assert rate == 10.0
    assert np.allclose(X, np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_expected_extent_pd(seed):
    _, _, X = expected_values(random_ggiw(np.random.default_rng(seed)))
    assert np.linalg.eigvalsh(X).min() > 0


def test_neg_detection_examples():
    z = simple_ggiw()
    q, br = neg_detection_factors(z, 0.0)
    assert q == 1.0 and br[0].log_w == 0.0
    z1 = GGIWParams(1.0, 1.0, np.zeros(4), np.eye(4), 10.0, np.eye(2))
    assert neg_detection_factors(z1, 1.0)[0] == pytest.approx(0.5, rel=1e-14)
    z2 = GGIWParams(20.0, 2.0, np.zeros(4), np.eye(4), 10.0, np.eye(2))
    expected = 0.02 + 0.98 * (2.0 / 3.0) ** 20
    q, br = neg_detection_factors(z2, 0.98)
    assert q == pytest.approx(expected, rel=1e-13)
    assert q == pytest.approx(0.020294714086625282, rel=1e-12)
    assert math.exp(log_neg_detection(z2, 0.98)) == pytest.approx(q, rel=1e-13)
    assert sum(math.exp(b.log_w) for b in br) == pytest.approx(1.0)
    assert br[1].params.beta == 3.0


def test_gamma_mixture_reduce_examples():
    assert gamma_mixture_reduce([(0.5, 4, 2), (0.5, 4, 2)]) == pytest.approx((4, 2))
    assert gamma_mixture_reduce([(1.0, 4, 2), (0.0, 99, 1)]) == (4, 2)
    assert gamma_mixture_reduce([(0.5, 4, 2), (0.5, 8, 2)]) == pytest.approx((3.6, 1.2), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(1, 50), st.floats(0.2, 5), st.floats(1, 50), st.floats(0.2, 5))
def test_gamma_mixture_reduce_moments(w, a1, b1, a2, b2):
    a, b = gamma_mixture_reduce([(w, a1, b1), (1 - w, a2, b2)])
    mean = w * a1 / b1 + (1 - w) * a2 / b2
    second = w * (a1 / b1**2 + (a1 / b1) ** 2) + (1 - w) * (a2 / b2**2 + (a2 / b2) ** 2)
    assert a / b == pytest.approx(mean, rel=1e-10)
    assert a / b**2 == pytest.approx(second - mean**2, rel=1e-8)


def test_kld_zero_on_equal(rng):
    z = random_ggiw(rng)
    assert ggiw_kld(z, z) == pytest.approx(0.0, abs=1e-10)


def test_kld_mean_shift_is_mahalanobis(rng):
    z = random_ggiw(rng)
    dm = rng.normal(size=4)
    z2 = GGIWParams(z.alpha, z.beta, z.m + dm, z.P, z.v, z.V)
    expected = 0.5 * dm @ np.linalg.solve(z2.P, dm)
    assert ggiw_kld(z, z2) == pytest.approx(expected, rel=1e-9)


def test_kld_matches_monte_carlo():
    rng = np.random.default_rng(7)
    a = GGIWParams(30.0, 3.0, np.array([0.0, 0.0, 1.0, 0.0]), np.diag([1.0, 1.5, 0.3, 0.2]),
                   14.0, np.array([[8.0, 1.0], [1.0, 5.0]]))
    b = GGIWParams(25.0, 2.0, np.array([0.5, -0.3, 0.8, 0.1]), np.diag([1.4, 1.0, 0.4, 0.3]),
                   12.0, np.array([[6.0, 0.0], [0.0, 6.0]]))
    g, xi, X = ggiw_sample(a, rng, 100_000)
    diffs = np.array([ggiw_logpdf(a, g[i], xi[i], X[i]) - ggiw_logpdf(b, g[i], xi[i], X[i])
                      for i in range(len(g))])
    se = diffs.std(ddof=1) / math.sqrt(len(diffs))
    assert abs(ggiw_kld(a, b) - diffs.mean()) <= 3 * se


def test_mixture_reduce_examples(rng):
    z = simple_ggiw()
    out, pruned = ggiw_mixture_reduce([WeightedGGIW(math.log(0.3), z)] * 2, 0.1, -30.0, 10)
    assert len(out) == 1 and math.exp(out[0].log_w) == pytest.approx(0.6)
    assert pruned == 0.0

    small = WeightedGGIW(math.log(1e-6), simple_ggiw(50.0, 50.0))
    out, pruned = ggiw_mixture_reduce([WeightedGGIW(0.0, z), small], 0.1, math.log(1e-5), 10)
    assert len(out) == 1 and pruned == pytest.approx(1e-6)

    far = [WeightedGGIW(math.log(0.1), simple_ggiw(40.0 * i, 0.0)) for i in range(10)]
    out, _ = ggiw_mixture_reduce(far, 0.01, -30.0, 100)
    assert len(out) == 10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_mixture_reduce_conserves_mass(seed, n):
    rng = np.random.default_rng(seed)
    mix = [WeightedGGIW(float(rng.uniform(-5, 0)), random_ggiw(rng, spread=1.0)) for _ in range(n)]
    out, pruned = ggiw_mixture_reduce(mix, 2.0, -30.0, 100)
    before = sum(math.exp(c.log_w) for c in mix)
    after = sum(math.exp(c.log_w) for c in out)
    assert after + pruned == pytest.approx(before, rel=1e-12)
    assert len(out) <= n


def test_sensor_validation():
    with pytest.raises(ValueError):
        SensorModel(p_D=1.5)
    with pytest.raises(ValueError):
        SensorModel(area=0.0)
    assert SensorModel(clutter_rate=0.0).log_kappa == -math.inf
