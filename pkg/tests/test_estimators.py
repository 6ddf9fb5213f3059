import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrate.distributions import Deterministic, Gamma, GaussianCurved, TwoPointLattice
from lowrate.engine import (
    ExogenousRenewal,
    Geometric,
    HittingOneSided,
    RenewalTrace,
    SecondMomentTrace,
    simulate_paired,
    simulate_trace,
)
from lowrate.estimators import (
    CORRECTION_SKIPPED,
    NO_SAMPLE,
    OK,
    Estimate,
    EstimatorKind,
    estimate,
    estimate_sigma,
    fuse,
    g_correct,
    overshoot_correct,
    weights_from_sigmas,
)
from lowrate.rng import RngStream

K = EstimatorKind


@pytest.fixture
def det_trace(stream):
    return simulate_trace(Deterministic(4), HittingOneSided(8), 7, stream)


def test_deterministic_values(det_trace):
    assert estimate(det_trace, K.HAT).value == 4
    assert estimate(det_trace, K.BAR).value == 4
    assert math.isclose(estimate(det_trace, K.CHECK).value, 24 / 7)
    assert math.isclose(estimate(det_trace, K.TILDE).value, 24 / 7)
    assert estimate(det_trace, K.HAT).denominator_used == "last_sample_time"
    assert estimate(det_trace, K.CHECK).denominator_used == "horizon"


def test_empty_trace_policy(stream):
    tr = simulate_trace(Deterministic(4), HittingOneSided(100), 7, stream)
    for kind in (K.BAR, K.HAT):
        e = estimate(tr, kind)
        assert e.status == NO_SAMPLE and math.isnan(e.value)
    for kind in (K.TILDE, K.CHECK):
        e = estimate(tr, kind)
        assert e.status == OK and e.value == 0


def test_walk_required(det_trace):
    with pytest.raises(ValueError):
        estimate(det_trace.without_walk(), K.BAR)
    tr = simulate_trace(Deterministic(1), ExogenousRenewal(Geometric(3)), 30, RngStream(1))
    with pytest.raises(ValueError):
        estimate(tr, K.HAT)


def test_two_sided_forms():
    tr = RenewalTrace(10, np.array([2, 5, 9]), np.array([1, 0, 1], np.int8), np.zeros(3),
                      np.array([3.0, 0.0, 3.0]), 3.0, True)
    assert estimate(tr, K.HAT).value == 3 * 1 / 9
    assert estimate(tr, K.CHECK).value == 3 * 1 / 10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5000), st.floats(2, 80))
def test_decomposition(seed, big):
    tr = simulate_trace(GaussianCurved(4, 4), HittingOneSided(big), 400, RngStream(seed))
    if tr.N_t == 0:
        return
    eta = tr.eta.sum()
    assert math.isclose(estimate(tr, K.BAR).value, estimate(tr, K.HAT).value + eta / tr.tau_of_t, rel_tol=1e-9)
    assert math.isclose(estimate(tr, K.TILDE).value, estimate(tr, K.CHECK).value + eta / tr.t,
                        rel_tol=1e-9, abs_tol=1e-12)


def test_g_arithmetic():
    e = Estimate(K.HAT, 4.0, 3, "last_sample_time")
    assert overshoot_correct(e, 8, Gamma(1, 1)).value == 6
    assert math.isclose(overshoot_correct(e, 400, Gamma(1, 1)).value, 4.04)
    assert overshoot_correct(e, 8, Gamma(1, 1)).kind is K.GHAT


def test_g_skips():
    neg = Estimate(K.CHECK, -1.0, 3, "horizon")
    out = overshoot_correct(neg, 8, Gamma(1, 1))
    assert out.status == CORRECTION_SKIPPED and out.value == -1 and out.kind is K.GCHECK
    lat = overshoot_correct(Estimate(K.HAT, 2.0, 3, "last_sample_time"), 8, TwoPointLattice(1, 3, 0.5))
    assert lat.status == CORRECTION_SKIPPED and lat.value == 2
    with pytest.raises(ValueError):
        overshoot_correct(Estimate(K.BAR, 2.0, 3, "last_sample_time"), 8, Gamma(1, 1))


@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(1, 1000), st.sampled_from([0.5, 1.0, 4.0]))
def test_g_increasing_and_sign_preserving(x, y, big, c):
    lo, hi = sorted((x, y))
    for model in (GaussianCurved(1, c), Gamma(1 / c, 1.0)):
        glo, ghi = g_correct(lo, big, model), g_correct(hi, big, model)
        assert 0 < glo <= ghi
        assert glo >= lo


def test_sigma_examples(stream):
    tr, z = simulate_paired(Deterministic(4), HittingOneSided(8), 32, 7, stream)
    e = estimate_sigma(tr, z)
    assert e.value == 0 and e.status == OK
    # radicand forced negative: clamp and flag
    z2 = SecondMomentTrace(7, np.array([6]), 1.0)
    e = estimate_sigma(tr, z2)
    assert e.value == 0 and e.meta["clamped"] == 1
    empty = SecondMomentTrace(7, np.array([], dtype=np.int64), 1000.0)
    assert estimate_sigma(tr, empty).status == NO_SAMPLE


def test_weights():
    assert np.allclose(weights_from_sigmas([2, 2]), [0.5, 0.5])
    assert np.allclose(weights_from_sigmas([1, 2]), [0.8, 0.2])
    assert np.allclose(weights_from_sigmas([1, 1, 1, 1]), [0.25] * 4)
    with pytest.raises(ValueError):
        weights_from_sigmas([1, 0])


@given(st.lists(st.floats(0.1, 100), min_size=1, max_size=8))
def test_weights_sum_to_one(s):
    assert math.isclose(weights_from_sigmas(s).sum(), 1.0)


def _est(v, kind=K.HAT):
    return Estimate(kind, v, 1, "last_sample_time")


def test_fuse_examples():
    assert fuse([_est(4), _est(4)], [0.5, 0.5]).value == 4
    assert math.isclose(fuse([_est(3), _est(5)], [0.8, 0.2]).value, 3.4)
    bad = Estimate(K.HAT, math.nan, 0, "last_sample_time", NO_SAMPLE)
    assert fuse([_est(3), bad], [0.5, 0.5]).status == NO_SAMPLE
    with pytest.raises(ValueError):
        fuse([_est(3), _est(3, K.CHECK)], [0.5, 0.5])


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=6), st.floats(-5, 5), st.floats(-5, 5))
def test_fuse_affine(vals, a, b):
    w = weights_from_sigmas(np.arange(1, len(vals) + 1))
    base = fuse([_est(v) for v in vals], w).value
    shifted = fuse([_est(a * v + b) for v in vals], w).value
    assert math.isclose(shifted, a * base + b, rel_tol=1e-9, abs_tol=1e-9)
