"""Monte Carlo checks of the renewal-theoretic identities and rate bounds.

Every check produces a :class:`GridReport`. Bound checks are one-sided: a row
fails only when the empirical mean exceeds the bound by more than
``BOUND_SE`` standard errors.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .distributions import (
    Deterministic,
    IncrementModel,
    UnsupportedModelError,
    pos_part_moment,
    rho_closed_form,
)
from .engine import (
    DeterministicInterarrival,
    Exponential,
    ExogenousRenewal,
    Geometric,
    HittingOneSided,
    Interarrival,
    first_passage_batch,
    simulate_trace,
)
from .rng import RngStream

BOUND_SE = 3.0
IDENTITY_SE = 4.0
MIN_RATIO = 10.0
MIN_REPS = 1000
REPORT_COLUMNS = ("check_name", "delta", "t", "r", "statistic", "se", "bound_rhs", "pass")


@dataclass(frozen=True)
class RateSpec:
    """Moment order ``r`` and growth exponent ``q`` of E|tau - delta|^(r v 2)."""

    r: float
    q: float

    def __post_init__(self):
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if not 0 <= self.q <= max(self.r, 2):
            raise ValueError(f"q must lie in [0, {max(self.r, 2)}], got {self.q}")

    @property
    def alpha(self) -> float:
        return 2 * self.q / max(self.r, 2) - 1

    def predicted(self, delta, t):
        """max((delta/t)^r, (delta^alpha/t)^(r/2)): the rate up to a constant factor.

        The maximum and the sum of the two terms are equivalent up to a factor
        of two; the maximum keeps a single fitted constant meaningful when the
        dominant term changes across the grid.
        """
        delta = np.asarray(delta, dtype=float)
        t = np.asarray(t, dtype=float)
        return np.maximum((delta / t) ** self.r, (delta**self.alpha / t) ** (self.r / 2))


class Row(NamedTuple):
    check: str
    delta: float
    t: float
    r: float
    statistic: float
    se: float
    bound_rhs: float | None = None
    passed: bool | None = None


class SlopeFit(NamedTuple):
    check: str
    axis: str  # "t" at fixed delta, "delta" at fixed t/delta
    fixed: float
    slope: float
    se: float
    predicted: float


@dataclass
class GridReport:
    name: str
    rows: list[Row] = field(default_factory=list)
    slopes: list[SlopeFit] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.rows)

    def rows_for(self, check: str) -> list[Row]:
        return [r for r in self.rows if r.check == check]

    def slope(self, check: str, axis: str = "t", fixed: float | None = None) -> SlopeFit:
        hits = [s for s in self.slopes if s.check == check and s.axis == axis and (fixed is None or s.fixed == fixed)]
        if not hits:
            raise KeyError(f"no {axis}-slope for {check!r}")
        return hits[0]

    def to_csv(self, path, append: bool = False) -> None:
        write_reports(path, [self], append=append)


def write_reports(path, reports, append: bool = False) -> None:
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(REPORT_COLUMNS)
        for rep in reports:
            for row in rep.rows:
                bound = "" if row.bound_rhs is None else repr(float(row.bound_rhs))
                ok = "" if row.passed is None else str(bool(row.passed)).lower()
                w.writerow([row.check, repr(row.delta), repr(row.t), repr(row.r),
                            repr(row.statistic), repr(row.se), bound, ok])


# --------------------------------------------------------------------------- helpers


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _pos2(model) -> tuple[float, float, str]:
    """E[(X^+)^2] with its SE and provenance."""
    if isinstance(model, Interarrival):
        return model.second_moment, 0.0, "closed_form"
    val = pos_part_moment(model, 2)
    if val is not None:
        return val, 0.0, "closed_form"
    x = np.asarray(model.draw(RngStream(0, purpose="pos2").gen, 1_000_000), dtype=float)
    m, se = _mean_se(np.maximum(x, 0.0) ** 2)
    return m, se, "sampled"


def fit_slope(x, y, se_y) -> tuple[float, float]:
    """Weighted least-squares slope of log y on log x, weights from the SE of log y."""
    lx = np.log(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    se_log = np.asarray(se_y, dtype=float) / y
    w = np.ones_like(se_log)
    np.divide(1.0, se_log**2, out=w, where=se_log > 0)
    xm = np.sum(w * lx) / w.sum()
    sxx = np.sum(w * (lx - xm) ** 2)
    slope = float(np.sum(w * (lx - xm) * np.log(y)) / sxx)
    return slope, float(math.sqrt(1.0 / sxx)) if np.all(se_log > 0) else math.nan


# --------------------------------------------------------------------------- Wald and Lorden


def wald_residuals(model, levels, reps: int, stream: RngStream) -> GridReport:
    """Mean of S_nu - mu*nu and the ratio Var[S_nu - mu*nu] / (E[nu] Var[X]) per level."""
    if not model.mean > 0:
        raise ValueError("Wald checks need a positive mean")
    mu, var = model.mean, model.variance
    rep = GridReport("wald", meta={"mean": mu, "variance": var, "reps": reps})
    for i, level in enumerate(levels):
        fp = first_passage_batch(model, level, reps, stream.child(i))
        resid = fp.tau_at_nu - mu * fp.nu
        m, se = _mean_se(resid)
        ok = abs(m) <= IDENTITY_SE * se if se > 0 else abs(m) <= 1e-9 * max(1.0, level)
        rep.rows.append(Row("wald_mean", float(mu), float(level), 1.0, m, se, 0.0, bool(ok)))
        v = float(resid.var(ddof=1))
        if var == 0:
            rep.rows.append(Row("wald_variance_ratio", mu, float(level), 2.0, math.nan, 0.0, 1.0, v <= 1e-18))
            continue
        nu_bar = float(fp.nu.mean())
        ratio = v / (nu_bar * var)
        infl = ((resid - resid.mean()) ** 2 - v) / (nu_bar * var) - v * (fp.nu - nu_bar) / (nu_bar**2 * var)
        rse = float(infl.std(ddof=1) / math.sqrt(reps))
        rep.rows.append(Row("wald_variance_ratio", mu, float(level), 2.0, ratio, rse, 1.0,
                            bool(abs(ratio - 1) <= IDENTITY_SE * rse)))
    return rep


def lorden_bounds(model, levels, reps: int, stream: RngStream) -> GridReport:
    """Excess over each level against E[(X^+)^2]/mu, and age against E[X^2]/mu.

    The age rows treat positive increments as renewal interarrivals: the age
    at horizon ``level`` is ``level`` minus the last partial sum not above it.
    """
    if not model.mean > 0:
        raise ValueError("Lorden bounds need a positive mean")
    mu = model.mean
    m2, m2_se, source = _pos2(model)
    bound = m2 / mu
    bound_se = m2_se / mu
    renewal = isinstance(model, Interarrival) or model.positive_support
    rep = GridReport("lorden", meta={"bound": bound, "bound_source": source, "age_rows": renewal, "reps": reps})
    for i, level in enumerate(levels):
        fp = first_passage_batch(model, level, reps, stream.child(i))
        checks = [("excess", fp.tau_at_nu - level)]
        if renewal:
            checks.append(("age", level - fp.prev))
        for name, sample in checks:
            m, se = _mean_se(sample)
            tol = BOUND_SE * math.hypot(se, bound_se)
            rep.rows.append(Row(name, mu, float(level), 1.0, m, se, float(bound), bool(m <= bound + tol)))
    return rep


# --------------------------------------------------------------------------- low-rate tables


@dataclass(frozen=True)
class HittingFamily:
    """One-sided hitting schemes on ``model`` indexed by target period delta (Delta = mu*delta)."""

    model: IncrementModel
    q: float = 1.0

    def scheme(self, delta):
        return HittingOneSided(self.model.mean * delta)

    def effective_delta(self, delta) -> float:
        """Mean interarrival of the realized scheme: (Delta + rho)/mu."""
        mu = self.model.mean
        big = mu * delta
        if isinstance(self.model, Deterministic):
            return float(math.ceil(big / mu - 1e-12))
        try:
            rho = rho_closed_form(self.model)
        except UnsupportedModelError as exc:
            raise UnsupportedModelError(f"no overshoot constant to place delta: {exc}") from None
        return (big + rho) / mu

    @property
    def walk(self):
        return self.model


_Q_BY_INTERARRIVAL = {Exponential: 2.0, Geometric: 2.0, DeterministicInterarrival: 0.0}


@dataclass(frozen=True)
class RenewalFamily:
    """Exogenous renewal schemes whose interarrival law is ``kind(delta)``."""

    kind: type

    @property
    def q(self) -> float:
        return _Q_BY_INTERARRIVAL[self.kind]

    def scheme(self, delta):
        return ExogenousRenewal(self.kind(delta))

    def effective_delta(self, delta) -> float:
        return self.kind(delta).mean

    @property
    def walk(self):
        return Deterministic(1.0)


def as_family(model_or_scheme):
    if isinstance(model_or_scheme, (HittingFamily, RenewalFamily)):
        return model_or_scheme
    if isinstance(model_or_scheme, IncrementModel):
        return HittingFamily(model_or_scheme)
    if isinstance(model_or_scheme, type) and issubclass(model_or_scheme, Interarrival):
        return RenewalFamily(model_or_scheme)
    raise TypeError(f"cannot build a scheme family from {model_or_scheme!r}")


def _validate_grid(grid, reps):
    grid = sorted((float(d), int(t)) for d, t in grid)
    if not grid:
        raise ValueError("grid is empty")
    if len(set(grid)) != len(grid):
        raise ValueError("grid has duplicate points")
    bad = [(d, t) for d, t in grid if t / d < MIN_RATIO]
    if bad:
        raise ValueError(f"grid points with t/delta < {MIN_RATIO:g}: {bad}")
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}, got {reps}")
    return grid


def _by_delta(grid):
    groups = defaultdict(list)
    for d, t in grid:
        groups[d].append(t)
    return sorted(groups.items())


def _simulate_groups(family, grid, reps, stream):
    """Per delta: one trace per replication to the largest t, cut at the others."""
    out = {}
    for gi, (delta, ts) in enumerate(_by_delta(grid)):
        scheme = family.scheme(delta)
        t_max = max(ts)
        traces = [
            simulate_trace(family.walk, scheme, t_max, stream.child(gi, k), observe_S=False, until_next=True)
            for k in range(reps)
        ]
        out[delta] = (ts, traces)
    return out


def _slopes(rows, predicted, check):
    fits = []
    by_d = defaultdict(list)
    by_ratio = defaultdict(list)
    for row, pred in zip(rows, predicted):
        by_d[row.delta].append((row.t, row, pred))
        by_ratio[round(row.t / row.delta, 6)].append((row.delta, row, pred))
    for axis, groups in (("t", by_d), ("delta", by_ratio)):
        for key, pts in sorted(groups.items()):
            if len(pts) < 2 or any(not p[1].statistic > 0 for p in pts):
                continue
            pts.sort(key=lambda p: p[0])
            x = [p[0] for p in pts]
            slope, se = fit_slope(x, [p[1].statistic for p in pts], [p[1].se for p in pts])
            pslope, _ = fit_slope(x, [p[2] for p in pts], [0.0] * len(pts))
            fits.append(SlopeFit(check, axis, float(key), slope, se, pslope))
    return fits


def lr_error_table(model_or_scheme, r: float, grid, reps: int, stream: RngStream) -> GridReport:
    """E|delta nu(t)/t - 1|^r and E|delta N(t)/t - 1|^r over a (delta, t) grid.

    ``model_or_scheme`` is an increment model (one-sided hitting with
    Delta = mu*delta), an interarrival class such as ``Exponential``, or a
    family object. Each row's bound is C times the predicted rate with C
    fitted on the first grid point.
    """
    family = as_family(model_or_scheme)
    grid = _validate_grid(grid, reps)
    spec = RateSpec(r, family.q)
    rep = GridReport(
        "lr_error",
        meta={"q": spec.q, "alpha": spec.alpha, "r": r, "reps": reps, "min_t_over_delta": MIN_RATIO,
              "nu_equals_N_plus_1": True},
    )
    sims = _simulate_groups(family, grid, reps, stream)
    raw = {"lr_nu": [], "lr_N": []}
    for delta, (ts, traces) in sims.items():
        d_eff = family.effective_delta(delta)
        for t in ts:
            n = np.empty(reps)
            nu = np.empty(reps)
            for k, tr in enumerate(traces):
                cut = tr.at(t)
                if cut.next_tau is None or cut.next_tau <= t:
                    raise AssertionError(f"nu(t) != N(t) + 1 at delta={delta}, t={t}, rep={k}")
                n[k] = cut.N_t
                nu[k] = cut.N_t + 1
            for name, count in (("lr_nu", nu), ("lr_N", n)):
                m, se = _mean_se(np.abs(d_eff * count / t - 1) ** r)
                raw[name].append(Row(name, d_eff, float(t), float(r), m, se))
    for name, rows in raw.items():
        pred = [float(spec.predicted(row.delta, row.t)) for row in rows]
        c = rows[0].statistic / pred[0]
        rep.meta[f"C_{name}"] = c
        for row, p in zip(rows, pred):
            bound = c * p
            ok = row.statistic <= bound + BOUND_SE * row.se
            rep.rows.append(row._replace(bound_rhs=float(bound), passed=bool(ok)))
        rep.slopes.extend(_slopes(rows, pred, name))
    return rep


def anscombe_ratio(model_or_scheme, grid, reps: int, stream: RngStream) -> GridReport:
    """E|tau(t)/t - 1| = E[age]/t against (E[tau^2]/delta)/t.

    For hitting schemes E[tau^2]/E[tau] is estimated from all simulated
    interarrival times, and its SE enters the tolerance.
    """
    family = as_family(model_or_scheme)
    grid = _validate_grid(grid, reps)
    rep = GridReport("anscombe", meta={"reps": reps, "min_t_over_delta": MIN_RATIO})
    sims = _simulate_groups(family, grid, reps, stream)
    for delta, (ts, traces) in sims.items():
        if isinstance(family, RenewalFamily):
            ia = family.kind(delta)
            ratio, ratio_se = ia.second_moment / ia.mean, 0.0
        else:
            gaps = np.concatenate([np.diff(tr.tau, prepend=0) for tr in traces]).astype(float)
            m1, m2 = gaps.mean(), np.mean(gaps**2)
            ratio = m2 / m1
            infl = (gaps**2 - m2) / m1 - m2 * (gaps - m1) / m1**2
            ratio_se = float(infl.std(ddof=1) / math.sqrt(gaps.size))
        d_eff = family.effective_delta(delta)
        for t in ts:
            age = np.array([t - tr.at(t).tau_of_t for tr in traces], dtype=float)
            m, se = _mean_se(age / t)
            bound = ratio / t
            tol = BOUND_SE * math.hypot(se, ratio_se / t)
            rep.rows.append(Row("anscombe", d_eff, float(t), 1.0, m, se, float(bound), bool(m <= bound + tol)))
    return rep


# --------------------------------------------------------------------------- overshoot constant


class RhoCheck(NamedTuple):
    closed_form: float
    ladder: float
    ladder_se: float
    direct: float
    direct_se: float
    max_z: float  # largest pairwise gap in combined SEs
    passed: bool


def rho_cross_check(model: IncrementModel, ladder_reps: int, direct_reps: int, stream: RngStream,
                    level: float = 1e4) -> RhoCheck:
    """Closed-form rho against ladder-height moments and the mean overshoot over ``level``."""
    from .distributions import ladder_height_moments

    closed = rho_closed_form(model)
    lad = ladder_height_moments(model, ladder_reps, stream.child(0))
    fp = first_passage_batch(model, level, direct_reps, stream.child(1))
    direct, direct_se = _mean_se(fp.overshoot)
    pairs = [
        (closed, 0.0, lad.rho_hat, lad.se),
        (closed, 0.0, direct, direct_se),
        (lad.rho_hat, lad.se, direct, direct_se),
    ]
    max_z = max(abs(a - b) / math.hypot(sa, sb) for a, sa, b, sb in pairs)
    return RhoCheck(closed, lad.rho_hat, lad.se, direct, direct_se, max_z, max_z <= IDENTITY_SE)
