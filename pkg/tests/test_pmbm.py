import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggiw_pmbm.ggiw import MotionModel, SensorModel, WeightedGGIW, neg_detection_factors
from ggiw_pmbm.pmbm import (
    Association,
    BernoulliTrack,
    Cell,
    EmptyCell,
    GlobalHypothesis,
    PMBMDensity,
    PPPIntensity,
    TooLarge,
    bernoulli_detect,
    bernoulli_missed,
    enumerate_all_associations,
    exhaustive_source,
    extract_estimate,
    ppp_detect_new,
    ppp_update_missed,
    predict,
    set_partitions,
    update,
)
from conftest import simple_ggiw

BELL = [1, 1, 2, 5, 15, 52, 203, 877, 4140]


def track(r, x=0.0, y=0.0, tid=0, **kw):
    return BernoulliTrack(r, (WeightedGGIW(0.0, simple_ggiw(x, y, **kw)),), tid)


def ppp(*xy, w=0.1):
    return PPPIntensity(tuple(WeightedGGIW(math.log(w), simple_ggiw(x, y)) for x, y in xy))


def test_predict_identity_survival():
    d = PMBMDensity(ppp((0, 0), (5, 5)), (GlobalHypothesis(0.0, (track(0.7),)),))
    out = predict(d, MotionModel(), SensorModel(p_S=1.0), PPPIntensity())
    assert out.hypotheses[0].tracks[0].r == 0.7
    assert [c.log_w for c in out.ppp.components] == [c.log_w for c in d.ppp.components]


def test_predict_survival_scales_r():
    d = PMBMDensity(PPPIntensity(), (GlobalHypothesis(0.0, (track(0.5),)),))
    out = predict(d, MotionModel(), SensorModel(p_S=0.99), PPPIntensity())
    assert out.hypotheses[0].tracks[0].r == pytest.approx(0.495)


def test_predict_appends_birth():
    d = PMBMDensity(ppp((0, 0), (1, 1)))
    out = predict(d, MotionModel(), SensorModel(), ppp((2, 2), (3, 3), (4, 4), (5, 5)))
    assert len(out.ppp) == 6


def test_ppp_missed_examples():
    p = PPPIntensity((WeightedGGIW(0.0, simple_ggiw(alpha=1.0, beta=1.0)),))
    out = ppp_update_missed(p, SensorModel(p_D=0.0))
    assert out.components[0].log_w == 0.0
    assert out.components[0].params.alpha == 1.0 and out.components[0].params.beta == 1.0
    out = ppp_update_missed(p, SensorModel(p_D=1.0))
    assert out.mass == pytest.approx(0.5, rel=1e-14)


def test_ppp_detect_new_examples():
    p = ppp((0, 0), w=0.5)
    W2 = np.array([[0.1, 0.0], [-0.2, 0.3]])
    t, _ = ppp_detect_new(p, W2, SensorModel(clutter_rate=10.0, area=400.0))
    assert t.r == 1.0
    W1 = np.array([[0.1, 0.0]])
    t, _ = ppp_detect_new(p, W1, SensorModel(clutter_rate=1e12, area=400.0))
    assert t is None or t.r < 1e-6
    t, _ = ppp_detect_new(p, W1, SensorModel(clutter_rate=0.0, area=400.0))
    assert t.r == 1.0
    with pytest.raises(EmptyCell):
        ppp_detect_new(p, np.zeros((0, 2)), SensorModel())


def test_ppp_detect_singleton_likelihood_includes_clutter():
    p = ppp((0, 0), w=0.5)
    s = SensorModel(clutter_rate=10.0, area=400.0)
    t, log_L = ppp_detect_new(p, np.array([[0.1, 0.0]]), s)
    # L = kappa + sum; r = sum / L
    assert math.exp(log_L) * (1 - t.r) == pytest.approx(10.0 / 400.0, rel=1e-10)


def test_bernoulli_detect_examples(sensor):
    t, log_L = bernoulli_detect(track(0.3), np.array([[0.2, 0.1]]), sensor)
    assert t.r == 1.0 and math.isfinite(log_L)
    _, log_L = bernoulli_detect(track(0.0), np.array([[0.2, 0.1]]), sensor)
    assert log_L == -math.inf


def test_bernoulli_missed_examples():
    tr = track(1.0)
    s = SensorModel(p_D=0.9)
    q, _ = neg_detection_factors(tr.params, 0.9)
    out, log_L = bernoulli_missed(tr, s)
    assert out.r == 1.0 and math.exp(log_L) == pytest.approx(q, rel=1e-12)
    out, log_L = bernoulli_missed(track(0.0), s)
    assert out.r == 0.0 and log_L == 0.0
    tr = track(0.6)
    out, log_L = bernoulli_missed(tr, SensorModel(p_D=0.0))
    assert out.r == pytest.approx(0.6, rel=1e-14) and log_L == pytest.approx(0.0, abs=1e-15)
    assert out.params.beta == tr.params.beta and out.params.alpha == tr.params.alpha


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.0, 1.0))
def test_bernoulli_missed_existence(r, pd):
    tr = track(r)
    q, _ = neg_detection_factors(tr.params, pd)
    out, log_L = bernoulli_missed(tr, SensorModel(p_D=pd))
    assert math.exp(log_L) == pytest.approx(1 - r + r * q, rel=1e-12)
    assert out.r == pytest.approx(r * q / (1 - r + r * q), rel=1e-12)


def test_enumerate_examples():
    assert len(enumerate_all_associations(1, [])) == 1
    two = enumerate_all_associations(1, [7])
    keys = {a.key() for a in two}
    assert keys == {
        frozenset({Cell(None, frozenset({0})), Cell(7, frozenset())}),
        frozenset({Cell(7, frozenset({0}))}),
    }
    assert len(enumerate_all_associations(3, [])) == 5
    with pytest.raises(TooLarge):
        enumerate_all_associations(10, [0, 1, 2])


@pytest.mark.parametrize("n", range(8))
def test_set_partitions_bell(n):
    parts = list(set_partitions(range(n)))
    assert len(parts) == BELL[n]
    assert len({frozenset(frozenset(c) for c in p) for p in parts}) == BELL[n]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(0, 3))
def test_enumerated_associations_valid_and_distinct(n, T):
    ids = list(range(T))
    out = enumerate_all_associations(n, ids)
    assert all(a.is_valid(n, ids) for a in out)
    assert len({a.key() for a in out}) == len(out)
    # with at most one track every set partition is admissible
    if T <= 1:
        assert len(out) == BELL[n + T]


def test_association_validity_checks():
    good = Association((Cell(0, frozenset({0})), Cell(None, frozenset({1}))))
    assert good.is_valid(2, [0])
    assert not Association((Cell(None, frozenset()),)).is_valid(0, [])
    assert not Association((Cell(0, frozenset({0})), Cell(0, frozenset({1})))).is_valid(2, [0])
    assert not Association((Cell(None, frozenset({0})),)).is_valid(2, [])


def _birth():
    return ppp((0, 0), w=0.1)


@pytest.mark.parametrize("n,expected", [(1, 2), (2, 15)])
def test_exhaustive_hypothesis_counts(n, expected):
    s = SensorModel(clutter_rate=1.0, area=400.0, p_D=0.9)
    d = PMBMDensity(PPPIntensity())
    rng = np.random.default_rng(3)
    for _ in range(2):
        d = predict(d, MotionModel(), s, _birth())
        d = update(d, rng.normal(size=(n, 2)), s, exhaustive_source)
    assert len(d.hypotheses) == expected
    assert mk_sum(d) == pytest.approx(1.0, abs=1e-12)


def mk_sum(d):
    return float(np.sum(d.weights()))


def test_update_empty_scan_single_child():
    s = SensorModel(p_D=0.9)
    hyps = (GlobalHypothesis(math.log(0.6), (track(0.9),)), GlobalHypothesis(math.log(0.4), (track(0.5, 3, 3),)))
    d = PMBMDensity(PPPIntensity(), hyps)
    out = update(d, np.zeros((0, 2)), s, exhaustive_source)
    assert len(out.hypotheses) == 2
    L = [math.exp(bernoulli_missed(h.tracks[0], s)[1]) for h in hyps]
    w = np.array([0.6 * L[0], 0.4 * L[1]])
    assert np.allclose(out.weights(), w / w.sum(), rtol=1e-12)


def test_extract_examples():
    hyps = (
        GlobalHypothesis(math.log(0.6), (track(0.9, 1.0, 2.0),)),
        GlobalHypothesis(math.log(0.4), (track(0.95, 9.0, 9.0),)),
    )
    est = extract_estimate(PMBMDensity(PPPIntensity(), hyps))
    assert len(est) == 1 and np.allclose(est[0].state[:2], [1.0, 2.0])
    hyps = (GlobalHypothesis(0.0, (track(0.9), track(0.4, 5, 5))),)
    assert len(extract_estimate(PMBMDensity(PPPIntensity(), hyps))) == 1
    assert extract_estimate(PMBMDensity(PPPIntensity())) == []
