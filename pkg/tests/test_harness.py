import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from lowrate.distributions import Deterministic, GaussianCurved, TwoPointLattice, UnsupportedModelError
from lowrate.engine import HittingOneSided, simulate_trace
from lowrate.estimators import EstimatorKind, estimate
from lowrate.harness import (
    ExperimentSpec,
    MCSummary,
    SummaryRow,
    clt_diagnostic,
    ks_distance,
    ordering_report,
    re_sweep,
)
from lowrate.rng import RngStream

K = EstimatorKind


def test_ks_examples():
    n = 100
    q = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    assert math.isclose(ks_distance(q), 0.005)
    assert ks_distance(np.zeros(7)) == 0.5
    x = RngStream(1).gen.normal(size=10_000)
    assert ks_distance(x) < 0.0136
    with pytest.raises(ValueError):
        ks_distance([])
    with pytest.raises(ValueError):
        ks_distance([0.0, np.inf])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40))
def test_ks_matches_scipy(x):
    assert math.isclose(ks_distance(x), stats.kstest(x, "norm").statistic, rel_tol=1e-9, abs_tol=1e-12)


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("x", GaussianCurved(4, 4), (), 300, 10)
    with pytest.raises(ValueError):
        ExperimentSpec("x", GaussianCurved(4, 4), (2,), 300, 0)
    with pytest.raises(UnsupportedModelError):
        ExperimentSpec("x", TwoPointLattice(1, 3, 0.5), (2,), 300, 10, kinds=(K.GHAT,))
    with pytest.raises(ValueError):
        ExperimentSpec("x", GaussianCurved(4, 4), (2,), 300, 10, scheme="exponential", kinds=(K.HAT,))


def test_deterministic_sweep_exact():
    spec = ExperimentSpec("det", Deterministic(4), (2, 3), 13, 50, kinds=(K.BAR, K.HAT, K.CHECK))
    table = re_sweep(spec)
    for kind in (K.BAR, K.HAT):
        assert all(r.re == 0 and r.mse == 0 for r in table.curve(kind))
    assert table.row(K.HAT, 2.0).delta_empirical == 2


def test_sweep_matches_trace_estimators():
    spec = ExperimentSpec("cons", GaussianCurved(4, 4), (3, 10), 300, 40)
    from lowrate.harness import _run_reps, _values

    batch = _run_reps(spec)
    for gi, d in enumerate(spec.grid):
        for kind in (K.BAR, K.TILDE, K.HAT, K.CHECK):
            got = _values(spec, batch, kind, gi)
            for rep in range(spec.reps):
                tr = simulate_trace(spec.model, HittingOneSided(4 * d), 300, spec.rep_stream(rep))
                ref = estimate(tr, kind).value
                assert got[rep] == pytest.approx(ref, nan_ok=True, rel=1e-12)


def test_workers_do_not_change_results(tmp_path):
    spec = ExperimentSpec("w", GaussianCurved(4, 4), (2, 20), 300, 1500)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    re_sweep(spec, workers=1).to_csv(a)
    re_sweep(spec, workers=3).to_csv(b)
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header == ("experiment_id,estimator,delta_target,delta_empirical,Delta,t,reps,"
                      "mse,se_mse,re,se_re,excluded_frac")


def test_bar_equals_tilde_on_divisor_grid():
    spec = ExperimentSpec("div", GaussianCurved(4, 4), (5, 10), 300, 500, scheme="deterministic",
                          kinds=(K.BAR, K.TILDE))
    table = re_sweep(spec)
    for d in (5.0, 10.0):
        assert math.isclose(table.row(K.BAR, d).re, table.row(K.TILDE, d).re, rel_tol=1e-12)


@pytest.mark.slow
def test_exponential_bar_near_full_sample():
    spec = ExperimentSpec("exp", GaussianCurved(4, 4), (2,), 300, 50_000, scheme="exponential",
                          kinds=(K.BAR,))
    r = re_sweep(spec).rows[0]
    # finite-t oracle: Var of S_tau/tau with tau(t) ~ t minus a geometric age, near 1 + O(delta/t)
    assert abs(r.re - 1) <= 3 * r.se_re + 0.02


def test_exclusion_fraction():
    spec = ExperimentSpec("ex", GaussianCurved(4, 4), (60,), 50, 2000, kinds=(K.HAT, K.CHECK))
    table = re_sweep(spec)
    assert 0 < table.row(K.HAT, 60.0).excluded_frac < 1
    assert table.row(K.CHECK, 60.0).excluded_frac == 0


def test_clt_validation():
    with pytest.raises(ValueError):
        clt_diagnostic(ExperimentSpec("c", GaussianCurved(4, 4), (10,), 1000, 50))
    with pytest.raises(ValueError):
        clt_diagnostic(ExperimentSpec("c", GaussianCurved(4, 4), (10, 20), 1000, 200))


def test_clt_standardization():
    res = clt_diagnostic(ExperimentSpec("c", GaussianCurved(4, 4), (20,), 2000, 300), K.CHECK)
    assert res.n == 300 and math.isclose(res.scale, 8 / math.sqrt(2000))


def _row(kind, d, re, se=0.01):
    return SummaryRow("t", kind, d, d, 4 * d, 300, 100, 0.0, re, se, re, se, 0.0)


def _table(bar, tilde, hat, check, gcheck):
    rows = []
    for kind, vals in (("Bar", bar), ("Tilde", tilde), ("Hat", hat), ("Check", check), ("GCheck", gcheck)):
        rows += [_row(kind, d, v) for d, v in zip((2, 10, 60), vals)]
    return MCSummary(rows)


def test_ordering_report_synthetic():
    good = _table((1, 1, 1), (1.1, 1.2, 1.3), (5, 2, 1), (5, 1.5, 2), (3, 1.2, 1.9))
    assert all(c.passed for c in ordering_report(good))
    bad = _table((1.1, 1, 1), (1, 1.2, 1.3), (1, 2, 3), (5, 6, 7), (6, 1.2, 1.9))
    assert [c.passed for c in ordering_report(bad)] == [False, False, False, False]
    # within noise counts as indistinguishable
    tie = _table((1.02, 1, 1), (1, 1.2, 1.3), (5, 2, 1), (5, 1.5, 2), (3, 1.2, 1.9))
    assert ordering_report(tie)[0].passed


def test_ordering_report_missing_column():
    with pytest.raises(ValueError):
        ordering_report(MCSummary([_row("Bar", 2, 1)]))
