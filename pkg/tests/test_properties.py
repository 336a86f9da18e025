"""Property-based checks of the metric axioms and gauge identities."""
import math

import numpy as np
from hypothesis import given, settings, strategies as st

from cone_contraction.cone import random_spd, symmetrize, thompson_distance
from cone_contraction.gauge import GaugeFunction, gauge_subgradient

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 4)


def triple(seed, n):
    rng = np.random.default_rng(seed)
    return [random_spd(rng, n, 0.05, 20.0) for _ in range(3)]


@settings(max_examples=60, deadline=None)
@given(seeds, dims)
def test_metric_axioms(seed, n):
    a, b, c = triple(seed, n)
    d_ab = thompson_distance(a, b)
    assert d_ab >= 0 and thompson_distance(a, a) == 0.0
    assert d_ab == thompson_distance(b, a)
    assert d_ab <= thompson_distance(a, c) + thompson_distance(c, b) + 1e-9


@settings(max_examples=60, deadline=None)
@given(seeds, dims, st.floats(0.01, 100.0))
def test_scaling_and_inversion(seed, n, s):
    a, b, _ = triple(seed, n)
    d = thompson_distance(a, b)
    assert math.isclose(thompson_distance(s * a, s * b), d, rel_tol=1e-7, abs_tol=1e-9)
    inv = thompson_distance(symmetrize(np.linalg.inv(a)), symmetrize(np.linalg.inv(b)))
    assert math.isclose(inv, d, rel_tol=1e-6, abs_tol=1e-8)
    assert math.isclose(thompson_distance(a, s * a), abs(math.log(s)), rel_tol=1e-9, abs_tol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6).filter(lambda v: any(abs(x) > 1e-6 for x in v)),
       st.sampled_from(["1", "1.5", "2", "4", "sup"]))
def test_subgradient_attains_gauge(lam, gauge):
    nu = GaugeFunction.parse(gauge)
    lam = np.array(lam)
    mu = gauge_subgradient(nu, lam)
    assert math.isclose(float(mu @ lam), nu(lam), rel_tol=1e-9, abs_tol=1e-9)
    assert np.all(mu * lam >= 0)
