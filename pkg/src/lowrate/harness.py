"""Monte Carlo experiments: relative-efficiency sweeps, CLT diagnostics, orderings.

Each replication owns a stream keyed by its index, so results do not depend
on how replications are split across workers.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

from .distributions import IncrementModel, rho_function
from .engine import (
    DeterministicInterarrival,
    Exponential,
    Geometric,
    draw_path,
    hitting_stats_next,
)
from .estimators import MU_KINDS, EstimatorKind, g_correct, sigma_from_stats, values_from_stats
from .rng import RngStream

MIN_CLT_REPS = 100
ORDER_SE = 3.0
SUMMARY_COLUMNS = (
    "experiment_id", "estimator", "delta_target", "delta_empirical", "Delta", "t", "reps",
    "mse", "se_mse", "re", "se_re", "excluded_frac",
)
SCHEMES = {
    "hitting": None,
    "hitting2": None,
    "exponential": Exponential,
    "geometric": Geometric,
    "deterministic": DeterministicInterarrival,
}
_CHUNK = 512


def ks_distance(sample) -> float:
    """sup |F_n - Phi| for the empirical CDF of ``sample``."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("KS distance of an empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("KS distance needs finite values")
    n = x.size
    cdf = special.ndtr(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo experiment over a grid of target sampling periods.

    For hitting schemes the threshold is Delta = mu * delta for each grid value.
    ``gamma`` turns on the squared-increment channel (CLT runs with a plug-in sigma).
    """

    experiment_id: str
    model: IncrementModel
    grid: tuple
    t: int
    reps: int
    master_seed: int = 0
    scheme: str = "hitting"
    kinds: tuple = MU_KINDS
    gamma: float | None = None
    output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(d) for d in self.grid))
        object.__setattr__(self, "kinds", tuple(EstimatorKind(k) for k in self.kinds))
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.grid:
            raise ValueError("grid must be nonempty")
        if any(not d > 0 for d in self.grid):
            raise ValueError("grid values must be positive")
        if self.t < 1 or int(self.t) != self.t:
            raise ValueError("t must be a positive integer")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")
        if EstimatorKind.SIGMA in self.kinds:
            raise ValueError("Sigma is not a drift estimator")
        if not self.hitting and any(not k.needs_walk for k in self.kinds):
            raise ValueError("Hat/Check and their corrections need a hitting scheme")
        if any(k in (EstimatorKind.GHAT, EstimatorKind.GCHECK) for k in self.kinds):
            if self.scheme == "hitting2":
                raise ValueError("overshoot correction is not defined for two-sided sampling")
            rho_function(self.model)  # raises UnsupportedModelError on lattice families
        if self.hitting and not self.model.mean > 0:
            raise ValueError("hitting-scheme experiments need a positive drift")

    @property
    def hitting(self) -> bool:
        return self.scheme.startswith("hitting")

    @property
    def thresholds(self) -> np.ndarray:
        return self.model.mean * np.asarray(self.grid)

    @property
    def total_increments(self) -> int:
        return self.reps * self.t

    def rep_stream(self, rep: int) -> RngStream:
        return RngStream(self.master_seed, rep=rep, purpose=self.experiment_id)


class SummaryRow(NamedTuple):
    experiment_id: str
    estimator: str
    delta_target: float
    delta_empirical: float
    Delta: float
    t: int
    reps: int
    mean_error: float
    mse: float
    se_mse: float
    re: float
    se_re: float
    excluded_frac: float


@dataclass
class MCSummary:
    rows: list[SummaryRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row(self, kind, delta_target: float) -> SummaryRow:
        kind = EstimatorKind(kind).value
        for r in self.rows:
            if r.estimator == kind and r.delta_target == delta_target:
                return r
        raise KeyError(f"no row for {kind} at delta={delta_target}")

    def curve(self, kind) -> list[SummaryRow]:
        kind = EstimatorKind(kind).value
        return sorted((r for r in self.rows if r.estimator == kind), key=lambda r: r.delta_target)

    @property
    def estimators(self) -> set[str]:
        return {r.estimator for r in self.rows}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            for r in self.rows:
                w.writerow([r.experiment_id, r.estimator, repr(r.delta_target), repr(r.delta_empirical),
                            repr(r.Delta), r.t, r.reps, repr(r.mse), repr(r.se_mse), repr(r.re),
                            repr(r.se_re), repr(r.excluded_frac)])


# --------------------------------------------------------------------------- replication kernels


class _Batch(NamedTuple):
    n: np.ndarray  # (reps, G) counts N(t)
    last: np.ndarray  # tau(t)
    s_last: np.ndarray  # S at tau(t)
    bits: np.ndarray
    next_tau: np.ndarray  # first sampling time after t
    m: np.ndarray | None = None  # second-moment channel counts (reps,)
    theta: np.ndarray | None = None


def _hitting_rep(spec: ExperimentSpec, rep: int):
    """Sampling statistics of one replication for every grid threshold."""
    stream = spec.rep_stream(rep)
    thr = spec.thresholds
    two_sided = spec.scheme == "hitting2"
    x = draw_path(spec.model, spec.t, stream)
    pad = int(min(4 * thr.max() / spec.model.mean + 64, 1 << 16))
    gen = stream.gen
    while True:
        x = np.concatenate([x, np.asarray(spec.model.draw(gen, pad), dtype=float)])
        n, last, s_last, bits, _, nxt = hitting_stats_next(x, thr, two_sided, spec.t)
        if np.all(nxt > 0):
            break
    m = theta = None
    if spec.gamma is not None:
        zn, zlast, *_ = hitting_stats_next(x[: spec.t] ** 2, np.array([spec.gamma]), False, spec.t)
        m, theta = zn[0], zlast[0]
    return n, last, s_last, bits, nxt, m, theta


def _renewal_rep(spec: ExperimentSpec, rep: int):
    stream = spec.rep_stream(rep)
    x = draw_path(spec.model, spec.t, stream)
    cs = np.cumsum(x)
    law = SCHEMES[spec.scheme]
    g = len(spec.grid)
    n = np.zeros(g, np.int64)
    last = np.zeros(g, np.int64)
    s_last = np.zeros(g)
    nxt = np.zeros(g, np.int64)
    for gi, d in enumerate(spec.grid):
        ia = law(d)
        sched = stream.child(1, gi).gen
        times = np.cumsum(ia.draw(sched, max(16, int(1.5 * spec.t / ia.mean) + 16)))
        while times[-1] <= spec.t:
            times = np.concatenate([times, times[-1] + np.cumsum(ia.draw(sched, 64))])
        k = int(np.searchsorted(times, spec.t, side="right"))
        n[gi] = k
        nxt[gi] = times[k]
        if k:
            last[gi] = times[k - 1]
            s_last[gi] = cs[last[gi] - 1]
    return n, last, s_last, n.copy(), nxt, None, None


def _run_reps(spec: ExperimentSpec, workers: int = 1) -> _Batch:
    g = len(spec.grid)
    reps = spec.reps
    n = np.zeros((reps, g), np.int64)
    last = np.zeros((reps, g), np.int64)
    s_last = np.zeros((reps, g))
    bits = np.zeros((reps, g), np.int64)
    nxt = np.zeros((reps, g), np.int64)
    m = np.zeros(reps, np.int64)
    theta = np.zeros(reps, np.int64)
    one = _hitting_rep if spec.hitting else _renewal_rep

    def work(lo):
        for rep in range(lo, min(reps, lo + _CHUNK)):
            out = one(spec, rep)
            n[rep], last[rep], s_last[rep], bits[rep], nxt[rep] = out[:5]
            if out[5] is not None:
                m[rep], theta[rep] = out[5], out[6]

    starts = range(0, reps, _CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, starts))
    else:
        for lo in starts:
            work(lo)
    has_z = spec.gamma is not None and spec.hitting
    return _Batch(n, last, s_last, bits, nxt, m if has_z else None, theta if has_z else None)


def _values(spec: ExperimentSpec, batch: _Batch, kind: EstimatorKind, gi: int) -> np.ndarray:
    delta_big = float(spec.thresholds[gi]) if spec.hitting else 0.0
    raw = values_from_stats(
        kind.base, batch.n[:, gi], batch.last[:, gi], batch.s_last[:, gi], batch.bits[:, gi], delta_big, spec.t
    )
    if kind in (EstimatorKind.GHAT, EstimatorKind.GCHECK):
        ok = np.isfinite(raw)
        out = raw.copy()
        out[ok] = g_correct(raw[ok], delta_big, spec.model)
        return out
    return raw


def _empirical_delta(batch: _Batch, gi: int) -> float:
    """sum tau_nu(t) / sum nu(t): Wald's identity makes this consistent for the mean period."""
    return float(batch.next_tau[:, gi].sum() / (batch.n[:, gi] + 1).sum())


def re_sweep(spec: ExperimentSpec, workers: int = 1) -> MCSummary:
    """MSE and relative efficiency MSE/(sigma^2/t) of each estimator at each grid point."""
    batch = _run_reps(spec, workers)
    mu = spec.model.mean
    scale = spec.model.variance / spec.t
    out = MCSummary(meta={"experiment_id": spec.experiment_id, "reps": spec.reps, "t": spec.t})
    for gi, d in enumerate(spec.grid):
        d_emp = _empirical_delta(batch, gi)
        big = float(spec.thresholds[gi]) if spec.hitting else 0.0
        for kind in spec.kinds:
            vals = _values(spec, batch, kind, gi)
            ok = np.isfinite(vals)
            err = vals[ok] - mu
            sq = err**2
            k = int(ok.sum())
            mse = float(sq.mean()) if k else math.nan
            se = float(sq.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan
            if scale > 0:
                re, se_re = mse / scale, se / scale
            else:
                re, se_re = (0.0 if mse == 0 else math.inf), 0.0
            out.rows.append(SummaryRow(
                spec.experiment_id, kind.value, d, d_emp, big, spec.t, spec.reps,
                float(err.mean()) if k else math.nan, mse, se, re, se_re, 1 - k / spec.reps,
            ))
    return out


# --------------------------------------------------------------------------- CLT and sigma


@dataclass
class CLTResult:
    kind: EstimatorKind
    values: np.ndarray
    ks_stat: float
    mean: float
    variance: float
    excluded: int
    scale: float

    @property
    def n(self) -> int:
        return int(self.values.size)


def _single_point(spec: ExperimentSpec):
    if len(spec.grid) != 1:
        raise ValueError("this diagnostic runs on a single grid point")
    if spec.reps < MIN_CLT_REPS:
        raise ValueError(f"reps must be >= {MIN_CLT_REPS}, got {spec.reps}")


def clt_diagnostic(spec: ExperimentSpec, kind=EstimatorKind.HAT, plug_sigma: bool = False,
                   workers: int = 1) -> CLTResult:
    """Standardized values (est - mu)/(sigma/sqrt(t)) and their KS distance from N(0, 1).

    With ``plug_sigma`` each replication uses its own sigma-hat (requires ``gamma``).
    """
    _single_point(spec)
    kind = EstimatorKind(kind)
    if plug_sigma and spec.gamma is None:
        raise ValueError("a plug-in sigma needs the squared-increment channel (gamma)")
    batch = _run_reps(spec, workers)
    vals = _values(spec, batch, kind, 0)
    if plug_sigma:
        hat = values_from_stats(EstimatorKind.HAT, batch.n[:, 0], batch.last[:, 0], 0.0, batch.bits[:, 0],
                                float(spec.thresholds[0]), spec.t)
        sig, _ = sigma_from_stats(spec.gamma, batch.m, batch.theta, hat)
        scale = sig / math.sqrt(spec.t)
    else:
        scale = np.full(vals.shape, spec.model.sd / math.sqrt(spec.t))
    ok = np.isfinite(vals) & np.isfinite(scale) & (scale > 0)
    z = (vals[ok] - spec.model.mean) / scale[ok]
    return CLTResult(
        kind, z, ks_distance(z) if z.size else math.nan,
        float(z.mean()) if z.size else math.nan,
        float(z.var(ddof=1)) if z.size > 1 else math.nan,
        spec.reps - int(ok.sum()),
        float(np.median(scale)),
    )


@dataclass
class SigmaResult:
    values: np.ndarray
    median: float
    median_rel_error: float
    clamped: int
    excluded: int


def sigma_consistency(spec: ExperimentSpec, workers: int = 1) -> SigmaResult:
    """sigma-hat over replications at a single (Delta, Gamma) point."""
    _single_point(spec)
    if spec.gamma is None or not spec.hitting:
        raise ValueError("sigma estimation needs a hitting scheme and gamma")
    batch = _run_reps(spec, workers)
    hat = values_from_stats(EstimatorKind.HAT, batch.n[:, 0], batch.last[:, 0], 0.0, batch.bits[:, 0],
                            float(spec.thresholds[0]), spec.t)
    sig, clamped = sigma_from_stats(spec.gamma, batch.m, batch.theta, hat)
    ok = np.isfinite(sig)
    vals = sig[ok]
    med = float(np.median(vals))
    return SigmaResult(vals, med, abs(med / spec.model.sd - 1), int(clamped[ok].sum()), spec.reps - int(ok.sum()))


# --------------------------------------------------------------------------- orderings


class Claim(NamedTuple):
    name: str
    passed: bool
    margin: float  # in units of combined SE; negative means violated
    detail: str


def _need(table: MCSummary, *kinds):
    missing = [k.value for k in kinds if k.value not in table.estimators]
    if missing:
        raise ValueError(f"ordering report needs estimator columns {missing}")


def _dominates(table, better, worse, name) -> Claim:
    """RE(better) <= RE(worse) at every grid point, up to ORDER_SE combined SEs."""
    worst, where = math.inf, None
    for b, w in zip(table.curve(better), table.curve(worse)):
        se = math.hypot(b.se_re, w.se_re)
        z = (w.re - b.re) / se if se > 0 else (math.inf if w.re >= b.re else -math.inf)
        if z < worst:
            worst, where = z, b.delta_target
    return Claim(name, worst >= -ORDER_SE, worst, f"tightest at delta={where:g}")


def ordering_report(table: MCSummary) -> list[Claim]:
    """The four qualitative relative-efficiency claims over the delta grid."""
    bar, tilde, hat, check, gcheck = (EstimatorKind.BAR, EstimatorKind.TILDE, EstimatorKind.HAT,
                                      EstimatorKind.CHECK, EstimatorKind.GCHECK)
    _need(table, bar, tilde, hat, check, gcheck)
    claims = [
        _dominates(table, bar, tilde, "RE(Bar) <= RE(Tilde) for every delta"),
        _dominates(table, gcheck, check, "RE(GCheck) <= RE(Check) for every delta"),
    ]
    h = table.curve(hat)
    lo, hi = h[0], h[-1]
    z = (lo.re - hi.re) / math.hypot(lo.se_re, hi.se_re)
    claims.append(Claim("RE(Hat) at largest delta < RE(Hat) at smallest delta", z > ORDER_SE, z,
                        f"{lo.re:.4g} at delta={lo.delta_target:g} vs {hi.re:.4g} at delta={hi.delta_target:g}"))
    c = table.curve(check)
    i = int(np.argmin([r.re for r in c]))
    if 0 < i < len(c) - 1:
        mn = c[i]
        zs = [(e.re - mn.re) / math.hypot(e.se_re, mn.se_re) for e in (c[0], c[-1])]
        zmin = min(zs)
        detail = f"minimum {mn.re:.4g} at delta={mn.delta_target:g}"
    else:
        zmin, detail = -math.inf, f"minimum at grid edge delta={c[i].delta_target:g}"
    claims.append(Claim("RE(Check) is U-shaped in delta", zmin > ORDER_SE, zmin, detail))
    return claims


def format_claims(claims: list[Claim]) -> str:
    return "\n".join(
        f"{'PASS' if c.passed else 'FAIL'}  {c.name}  (margin {c.margin:+.2f} SE; {c.detail})" for c in claims
    )
