import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrate.distributions import Deterministic, Gamma, Gaussian, GaussianCurved, rho_closed_form
from lowrate.engine import (
    BLOCK,
    DeterministicInterarrival,
    Exponential,
    ExogenousRenewal,
    Geometric,
    HittingOneSided,
    HittingTwoSided,
    RenewalTrace,
    draw_path,
    first_passage,
    first_passage_batch,
    hitting_stats,
    hitting_stats_next,
    simulate_paired,
    simulate_second_moment_trace,
    simulate_trace,
    trace_stats,
    write_trace_csv,
)
from lowrate.rng import RngStream


def test_deterministic_hits(stream):
    tr = simulate_trace(Deterministic(4), HittingOneSided(8), 7, stream)
    assert tr.tau.tolist() == [2, 4, 6]
    assert np.all(tr.eta == 0) and tr.N_t == 3 and tr.tau_of_t == 6
    tr = simulate_trace(Deterministic(4), HittingOneSided(7), 7, stream)
    assert tr.tau.tolist() == [2, 4, 6] and np.all(tr.eta == 1)


def test_trace_stats_examples(stream):
    tr = simulate_trace(Deterministic(4), HittingOneSided(8), 7, stream)
    assert trace_stats(tr)[:5] == (3, 6, 1, 3, 0)
    empty = simulate_trace(Deterministic(4), HittingOneSided(100), 7, stream)
    assert trace_stats(empty)[:5] == (0, 0, 7, 0, 0)
    two = RenewalTrace(10, np.array([2, 5, 9]), np.array([1, 0, 1], np.int8), np.zeros(3), None, 1.0, True)
    assert trace_stats(two).bit_sum == 1


def _brute(x, thr, two_sided):
    s = anchor = 0.0
    out = []
    for i, v in enumerate(x):
        s += v
        d = s - anchor
        if d >= thr or (two_sided and d <= -thr):
            out.append((i + 1, int(d >= thr), abs(d) - thr, s))
            anchor = s
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 30), st.booleans(), st.integers(1, 400))
def test_trace_matches_brute_force(seed, thr, two_sided, t):
    model = Gaussian(0.7, 2.0)
    scheme = HittingTwoSided(thr) if two_sided else HittingOneSided(thr)
    tr = simulate_trace(model, scheme, t, RngStream(seed))
    x = draw_path(model, t, RngStream(seed))
    ref = _brute(x, thr, two_sided)
    assert tr.tau.tolist() == [r[0] for r in ref]
    assert tr.z.tolist() == [r[1] for r in ref]
    assert np.allclose(tr.eta, [r[2] for r in ref])
    assert np.allclose(tr.s, [r[3] for r in ref])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1, 40), st.booleans())
def test_trace_invariants(seed, thr, two_sided):
    scheme = HittingTwoSided(thr) if two_sided else HittingOneSided(thr)
    tr = simulate_trace(GaussianCurved(1.0, 3.0), scheme, 500, RngStream(seed), until_next=True)
    assert np.all(np.diff(tr.tau) > 0)
    assert tr.tau_of_t <= tr.t < tr.next_tau
    assert np.all(tr.eta >= 0)
    inc = np.diff(tr.s, prepend=0.0)
    if two_sided:
        assert np.allclose(np.abs(inc), thr + tr.eta)
        assert np.array_equal(tr.z == 1, inc >= thr)
    else:
        assert np.allclose(inc, thr + tr.eta)


def test_block_boundaries(stream):
    # paths spanning several blocks agree with a single brute-force scan
    t = 2 * BLOCK + 123
    model = Gaussian(0.2, 1.0)
    tr = simulate_trace(model, HittingOneSided(5.0), t, stream.fresh())
    ref = _brute(draw_path(model, t, stream.fresh()), 5.0, False)
    assert tr.tau.tolist() == [r[0] for r in ref]


def test_hitting_stats_kernels_agree(stream):
    model = GaussianCurved(4, 4)
    x = draw_path(model, 3000, stream)
    thr = np.array([8.0, 40.0, 400.0])
    n, last, s_last, bits, eta = hitting_stats(x, thr, False)
    n2, last2, *_, nxt = hitting_stats_next(x, thr, False, 2000)
    for j, d in enumerate(thr):
        ref = _brute(x, d, False)
        assert n[j] == len(ref) and last[j] == ref[-1][0]
        inside = [r for r in ref if r[0] <= 2000]
        assert n2[j] == len(inside)
        after = [r[0] for r in ref if r[0] > 2000]
        assert nxt[j] == (after[0] if after else -1)


def test_at_matches_shorter_simulation(stream):
    model = GaussianCurved(4, 4)
    long = simulate_trace(model, HittingOneSided(40), 5000, stream.fresh())
    short = simulate_trace(model, HittingOneSided(40), 1234, stream.fresh())
    cut = long.at(1234)
    assert np.array_equal(cut.tau, short.tau) and np.array_equal(cut.s, short.s)
    assert cut.next_tau > 1234
    with pytest.raises(ValueError):
        long.at(6000)


def test_without_walk_hides_values(stream):
    tr = simulate_trace(GaussianCurved(4, 4), HittingOneSided(40), 300, stream).without_walk()
    assert tr.s is None and np.all(np.isnan(tr.eta)) and not tr.observed


def test_exogenous_schedule_independent_of_walk(stream):
    sch = ExogenousRenewal(Geometric(5))
    a = simulate_trace(GaussianCurved(4, 4), sch, 1000, stream.fresh())
    b = simulate_trace(Gamma(2, 1), sch, 1000, stream.fresh(), observe_S=False)
    assert np.array_equal(a.tau, b.tau)
    cs = np.cumsum(draw_path(GaussianCurved(4, 4), 1000, stream.fresh()))
    assert np.allclose(a.s, cs[a.tau - 1])
    assert np.all(a.z == 1) and np.all(a.eta == 0)


def test_exponential_rounding_flagged(stream):
    tr = simulate_trace(Deterministic(1), ExogenousRenewal(Exponential(3.0)), 100, stream)
    assert tr.meta["exponential_rounded_up"]
    tr = simulate_trace(Deterministic(1), ExogenousRenewal(DeterministicInterarrival(5)), 100, stream)
    assert tr.tau.tolist() == list(range(5, 101, 5))


@pytest.mark.parametrize("ia", [Exponential(7.3), Geometric(6.0), DeterministicInterarrival(4)])
def test_interarrival_moments_against_sampling(ia):
    # oracle: sampling the placed interarrival law
    x = ia.draw(RngStream(21).gen, 1_000_000).astype(float)
    assert abs(x.mean() - ia.mean) <= 4 * x.std() / 1000 + 1e-12
    assert abs(np.mean(x**2) - ia.second_moment) <= 4 * np.std(x**2) / 1000 + 1e-12


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_exponential_moments_grow_like_factorial(n):
    ia = Exponential(5.0)
    x = RngStream(22).gen.exponential(ia.nominal, 2_000_000) ** n
    assert abs(x.mean() - ia.continuous_moment(n)) <= 4 * x.std() / math.sqrt(x.size)
    assert ia.continuous_moment(n) >= ia.nominal**n


def test_second_moment_trace_examples(stream):
    z = simulate_second_moment_trace(Deterministic(4), 32, 7, stream)
    assert z.theta.tolist() == [2, 4, 6] and z.M_t == 3
    z = simulate_second_moment_trace(Deterministic(4), 33, 7, stream)
    assert z.theta.tolist() == [3, 6]


def test_paired_equals_separate(stream):
    model = GaussianCurved(4, 4)
    tr, z = simulate_paired(model, HittingOneSided(40), 900, 3000, stream.fresh())
    tr2 = simulate_trace(model, HittingOneSided(40), 3000, stream.fresh())
    z2 = simulate_second_moment_trace(model, 900, 3000, stream.fresh())
    assert np.array_equal(tr.tau, tr2.tau) and np.array_equal(z.theta, z2.theta)


@pytest.mark.slow
def test_second_moment_lln():
    model = GaussianCurved(4, 4)
    vals = [
        (z.gamma * z.M_t / z.theta_of_t)
        for z in (simulate_second_moment_trace(model, 1e4, 100_000, RngStream(5, rep=r)) for r in range(200))
    ]
    assert abs(np.mean(vals) / 80 - 1) < 0.05


def test_first_passage_examples(stream):
    fp = first_passage(Deterministic(2), 5, stream)
    assert (fp.nu, fp.tau_at_nu, fp.overshoot) == (3, 6, 1)
    fp = first_passage(Deterministic(2), 6, stream)
    assert (fp.nu, fp.tau_at_nu, fp.overshoot, fp.prev) == (4, 8, 2, 6)


def test_first_passage_exponential_renewal_function():
    fp = first_passage_batch(Gamma(1, 1), 100, 100_000, RngStream(31))
    se = fp.nu.std() / math.sqrt(fp.nu.size)
    assert abs(fp.nu.mean() - 101) <= 3 * se


@pytest.mark.slow
def test_first_hit_time_matches_wald():
    model = GaussianCurved(4, 4)
    big = 400.0
    tau1 = np.array([
        simulate_trace(model, HittingOneSided(big), 10_000, RngStream(41, rep=r)).tau[0] for r in range(20_000)
    ], dtype=float)
    expected = (big + rho_closed_form(model)) / model.mean
    assert abs(tau1.mean() - expected) <= 3 * tau1.std() / math.sqrt(tau1.size)


def test_trace_csv(tmp_path, stream):
    tr = simulate_trace(Deterministic(4), HittingOneSided(8), 7, stream)
    path = tmp_path / "t.csv"
    write_trace_csv(path, [(0, tr), (1, tr.without_walk())])
    lines = path.read_text().splitlines()
    assert lines[0] == "rep,n,tau_n,z_n,eta_n,S_tau_n"
    assert lines[1] == "0,1,2,1,0.0,8.0" and lines[4].endswith(",")


def test_bad_horizon(stream):
    with pytest.raises(ValueError):
        simulate_trace(Deterministic(4), HittingOneSided(8), 0, stream)
    with pytest.raises(ValueError):
        HittingOneSided(0)
