import math

import numpy as np
import pytest

from lowrate.distributions import Deterministic, Gamma, GaussianCurved
from lowrate.engine import DeterministicInterarrival, Exponential, Geometric
from lowrate.rng import RngStream
from lowrate.theory import (
    RateSpec,
    anscombe_ratio,
    fit_slope,
    lorden_bounds,
    lr_error_table,
    rho_cross_check,
    wald_residuals,
    write_reports,
)


def test_rate_spec():
    assert RateSpec(1, 1).alpha == 0
    assert RateSpec(1, 2).alpha == 1
    assert RateSpec(3, 3).alpha == 1
    with pytest.raises(ValueError):
        RateSpec(0.5, 1)
    with pytest.raises(ValueError):
        RateSpec(1, 3)


def test_fit_slope_exact():
    x = np.array([10.0, 100, 1000])
    slope, se = fit_slope(x, 3 * x**-0.7, 0.01 * x**-0.7)
    assert math.isclose(slope, -0.7) and se > 0


def test_wald_deterministic(stream):
    rep = wald_residuals(Deterministic(4), [10, 1000], 1000, stream)
    assert all(r.statistic == 0 for r in rep.rows_for("wald_mean"))
    assert rep.passed


def test_wald_exponential(stream):
    rep = wald_residuals(Gamma(1, 1), [100], 100_000, stream)
    assert rep.passed
    m = rep.rows_for("wald_mean")[0]
    assert abs(m.statistic) <= 4 * m.se


def test_lorden_exponential(stream):
    rep = lorden_bounds(Gamma(1, 1), [10, 100, 1000], 50_000, stream)
    assert rep.passed
    for r in rep.rows_for("excess"):
        assert r.bound_rhs == 2 and abs(r.statistic - 1) <= 4 * r.se


def test_lorden_deterministic(stream):
    rep = lorden_bounds(Deterministic(4), [10, 99, 1000], 1000, stream)
    for r in rep.rows_for("excess"):
        assert 0 < r.statistic <= 4 and r.bound_rhs == 4
    assert rep.passed


def test_lorden_no_age_rows_for_signed_walk(stream):
    rep = lorden_bounds(GaussianCurved(4, 4), [100], 2000, stream)
    assert not rep.rows_for("age") and rep.rows_for("excess")


def test_lr_deterministic_interarrivals(stream):
    grid = [(10, 100), (10, 1000), (20, 1000)]
    rep = lr_error_table(DeterministicInterarrival, 1, grid, 1000, stream)
    for r in rep.rows_for("lr_N"):
        assert r.statistic == 0
    for r in rep.rows_for("lr_nu"):
        assert math.isclose(r.statistic, r.delta / r.t) and r.statistic <= r.delta / r.t + 1e-15
    assert rep.meta["nu_equals_N_plus_1"]


def test_lr_grid_validation(stream):
    with pytest.raises(ValueError):
        lr_error_table(Exponential, 1, [(100, 500)], 1000, stream)
    with pytest.raises(ValueError):
        lr_error_table(Exponential, 1, [(10, 500)], 999, stream)


def test_lr_single_point_has_no_slope(stream):
    rep = lr_error_table(Geometric, 1, [(10, 200)], 1000, stream)
    assert rep.slopes == [] and len(rep.rows) == 2


@pytest.mark.slow
def test_lr_exponential_slope():
    rep = lr_error_table(Exponential, 1, [(100, 1000), (100, 10_000), (100, 100_000)], 4000, RngStream(51))
    s = rep.slope("lr_N")
    assert -0.6 <= s.slope <= -0.4
    assert rep.meta["q"] == 2


def test_anscombe_deterministic_divides(stream):
    rep = anscombe_ratio(DeterministicInterarrival, [(10, 100), (25, 1000)], 1000, stream)
    assert all(r.statistic == 0 for r in rep.rows) and rep.passed


def test_anscombe_geometric(stream):
    rep = anscombe_ratio(Geometric, [(20, 2000)], 4000, stream)
    r = rep.rows[0]
    assert math.isclose(r.bound_rhs, 39 / 2000)
    assert rep.passed


@pytest.mark.slow
def test_anscombe_hitting():
    rep = anscombe_ratio(GaussianCurved(4, 4), [(100, 10_000)], 2000, RngStream(52))
    assert rep.rows[0].statistic <= 0.05 and rep.passed


def test_rho_cross_check_gamma(stream):
    rc = rho_cross_check(Gamma(2, 0.5), 100_000, 5000, stream, level=1000)
    assert rc.closed_form == 3 and rc.passed


def test_report_csv(tmp_path, stream):
    rep = wald_residuals(Deterministic(4), [10], 1000, stream)
    path = tmp_path / "r.csv"
    write_reports(path, [rep])
    lines = path.read_text().splitlines()
    assert lines[0] == "check_name,delta,t,r,statistic,se,bound_rhs,pass"
    assert lines[1].startswith("wald_mean,4.0,10.0,1.0,0.0,0.0,0.0,true")
