import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggiw_pmbm.metrics import Infeasible, gospa, gwd, hungarian
from conftest import random_spd

I2 = np.eye(2)


def test_gwd_examples():
    a = (np.zeros(2), I2)
    assert gwd(a, a) == pytest.approx(0.0, abs=1e-12)
    assert gwd(a, (np.array([3.0, 4.0]), I2)) == pytest.approx(25.0)
    assert gwd((np.zeros(2), 4 * I2), a) == pytest.approx(2.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gwd_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = (rng.normal(size=2), random_spd(rng))
    b = (rng.normal(size=2), random_spd(rng))
    assert gwd(a, b) == pytest.approx(gwd(b, a), rel=1e-9, abs=1e-10)


def test_hungarian_examples():
    assign, cost = hungarian(np.ones((3, 3)) - np.eye(3))
    assert assign == (0, 1, 2) and cost == 0.0
    assign, cost = hungarian([[1, 2], [2, 1]])
    assert assign == (0, 1) and cost == 2.0
    with pytest.raises(Infeasible):
        hungarian([[math.inf, 1.0], [math.inf, 2.0]])
    with pytest.raises(ValueError):
        hungarian(np.zeros((3, 2)))


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(100):
        C = rng.normal(size=(4, 4))
        best = min(sum(C[i, p[i]] for i in range(4)) for p in itertools.permutations(range(4)))
        assert hungarian(C)[1] == best


def test_gospa_examples():
    assert gospa([], []).total == 0.0
    g = gospa([], [(np.zeros(2), I2)])
    assert (g.total, g.false_) == (5.0, 5.0)
    g = gospa([(np.zeros(2), I2)], [(np.array([1.0, 1.0]), I2)])
    assert g.total == pytest.approx(2.0) and g.localisation == pytest.approx(2.0)


def test_gospa_cutoff_and_monotone():
    far = gospa([(np.zeros(2), I2)], [(np.array([50.0, 0.0]), I2)])
    assert far.total == 10.0 and far.missed == 5.0 and far.false_ == 5.0
    X = [(np.zeros(2), I2)]
    base = gospa(X, X)
    more = gospa(X, X + [(np.array([80.0, 80.0]), I2)])
    assert more.total - base.total == pytest.approx(5.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gospa_decomposition(seed):
    rng = np.random.default_rng(seed)
    X = [(rng.uniform(-5, 5, 2), random_spd(rng, 2, 0.2)) for _ in range(rng.integers(0, 5))]
    Y = [(rng.uniform(-5, 5, 2), random_spd(rng, 2, 0.2)) for _ in range(rng.integers(0, 5))]
    g = gospa(X, Y)
    assert abs(g.total - (g.localisation + g.missed + g.false_)) <= 1e-10
    h = gospa(Y, X)
    assert g.total == pytest.approx(h.total, abs=1e-10)
    assert (g.missed, g.false_) == (h.false_, h.missed)
