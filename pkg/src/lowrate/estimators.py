"""Estimators of the drift from sampled paths, overshoot correction, sigma and fusion.

The array functions (``values_from_stats``, ``g_correct``) accept scalars or
numpy arrays and are what the Monte Carlo harness uses on whole batches; the
``Estimate`` wrappers apply the same formulas to a single trace.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import IncrementModel, UnsupportedModelError, rho_function
from .engine import RenewalTrace, SecondMomentTrace, trace_stats


class EstimatorKind(str, enum.Enum):
    BAR = "Bar"
    TILDE = "Tilde"
    HAT = "Hat"
    CHECK = "Check"
    GHAT = "GHat"
    GCHECK = "GCheck"
    SIGMA = "Sigma"

    @property
    def needs_walk(self) -> bool:
        return self in (EstimatorKind.BAR, EstimatorKind.TILDE)

    @property
    def uses_last_sample(self) -> bool:
        return self in (EstimatorKind.BAR, EstimatorKind.HAT, EstimatorKind.GHAT)

    @property
    def base(self) -> EstimatorKind:
        return {EstimatorKind.GHAT: EstimatorKind.HAT, EstimatorKind.GCHECK: EstimatorKind.CHECK}.get(self, self)


MU_KINDS = (
    EstimatorKind.BAR,
    EstimatorKind.TILDE,
    EstimatorKind.HAT,
    EstimatorKind.CHECK,
    EstimatorKind.GHAT,
    EstimatorKind.GCHECK,
)

OK = "ok"
NO_SAMPLE = "no_sample"
CORRECTION_SKIPPED = "correction_skipped"


@dataclass(frozen=True)
class Estimate:
    kind: EstimatorKind
    value: float
    n_messages: int
    denominator_used: str
    status: str = OK
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status != NO_SAMPLE


def _kind(kind) -> EstimatorKind:
    return kind if isinstance(kind, EstimatorKind) else EstimatorKind(kind)


def values_from_stats(kind, n, tau_last, s_last, bit_sum, delta, t):
    """Raw estimator values; NaN where the estimator needs a sample and N_t = 0.

    ``bit_sum`` is sum(2 z_n - 1), which equals N_t on one-sided traces.
    """
    kind = _kind(kind)
    tau_last = np.asarray(tau_last, dtype=float)
    safe_tau = np.where(tau_last > 0, tau_last, np.nan)
    if kind is EstimatorKind.BAR:
        return np.asarray(s_last, dtype=float) / safe_tau
    if kind is EstimatorKind.TILDE:
        return np.asarray(s_last, dtype=float) / t
    if kind is EstimatorKind.HAT:
        return delta * np.asarray(bit_sum, dtype=float) / safe_tau
    if kind is EstimatorKind.CHECK:
        return delta * np.asarray(bit_sum, dtype=float) / t
    raise ValueError(f"{kind.value} is not a raw estimator")


def g_correct(x, delta: float, model: IncrementModel):
    """g(x) = x (1 + rho(x)/delta) on x > 0; other values pass through unchanged."""
    rho = rho_function(model)
    x = np.asarray(x, dtype=float)
    pos = x > 0
    out = x.copy()
    if np.any(pos):
        xp = x[pos]
        out[pos] = xp * (1 + rho(xp) / delta)
    return out if out.ndim else float(out)


def estimate(trace: RenewalTrace, kind) -> Estimate:
    """Bar, Tilde, Hat or Check evaluated on ``trace`` at its horizon."""
    kind = _kind(kind)
    if kind not in (EstimatorKind.BAR, EstimatorKind.TILDE, EstimatorKind.HAT, EstimatorKind.CHECK):
        raise ValueError(f"estimate() handles Bar/Tilde/Hat/Check, got {kind.value}")
    if kind.needs_walk and not trace.observed:
        raise ValueError(f"{kind.value} needs the walk values at the sampling times")
    if not kind.needs_walk and trace.delta <= 0:
        raise ValueError(f"{kind.value} needs a hitting scheme (threshold > 0)")
    st = trace_stats(trace)
    denom = "last_sample_time" if kind.uses_last_sample else "horizon"
    if st.N_t == 0 and kind.uses_last_sample:
        return Estimate(kind, math.nan, 0, denom, NO_SAMPLE)
    value = values_from_stats(kind, st.N_t, st.tau_of_t, st.s_at_tau or 0.0, st.bit_sum, trace.delta, trace.t)
    return Estimate(kind, float(value), st.N_t, denom)


def overshoot_correct(est: Estimate, delta: float, model: IncrementModel) -> Estimate:
    """Apply g to a Hat or Check estimate; GHat/GCheck result."""
    corrected = {EstimatorKind.HAT: EstimatorKind.GHAT, EstimatorKind.CHECK: EstimatorKind.GCHECK}
    if est.kind not in corrected:
        raise ValueError(f"overshoot correction applies to Hat/Check, got {est.kind.value}")
    if est.status == NO_SAMPLE:
        raise ValueError("cannot correct an estimate without samples")
    kind = corrected[est.kind]
    if not est.value > 0:
        return replace(est, kind=kind, status=CORRECTION_SKIPPED, meta={**est.meta, "reason": "non-positive value"})
    try:
        value = g_correct(est.value, delta, model)
    except UnsupportedModelError as exc:
        return replace(est, kind=kind, status=CORRECTION_SKIPPED, meta={**est.meta, "reason": str(exc)})
    return replace(est, kind=kind, value=float(value))


def sigma_from_stats(gamma, m, theta_last, mu_hat):
    """(value, clamped) of sqrt(gamma M / theta(t) - mu_hat^2), radicand clamped at 0."""
    inner = gamma * np.asarray(m, dtype=float) / np.where(np.asarray(theta_last) > 0, theta_last, np.nan)
    inner = inner - np.asarray(mu_hat, dtype=float) ** 2
    clamped = inner < 0
    return np.sqrt(np.where(clamped, 0.0, inner)), clamped


def estimate_sigma(mu_trace: RenewalTrace, z_trace: SecondMomentTrace) -> Estimate:
    if mu_trace.t != z_trace.t:
        raise ValueError("mean and second-moment traces must share the horizon")
    n_msgs = mu_trace.N_t + z_trace.M_t
    if mu_trace.N_t == 0 or z_trace.M_t == 0:
        return Estimate(EstimatorKind.SIGMA, math.nan, n_msgs, "last_sample_time", NO_SAMPLE)
    mu_hat = estimate(mu_trace, EstimatorKind.HAT).value
    value, clamped = sigma_from_stats(z_trace.gamma, z_trace.M_t, z_trace.theta_of_t, mu_hat)
    return Estimate(
        EstimatorKind.SIGMA, float(value), n_msgs, "last_sample_time", OK, {"clamped": int(bool(clamped))}
    )


def weights_from_sigmas(sigmas) -> np.ndarray:
    """Inverse-variance weights summing to one."""
    s = np.asarray(sigmas, dtype=float)
    if s.size == 0 or np.any(~(s > 0)):
        raise ValueError("all sigmas must be positive")
    inv = s**-2
    return inv / inv.sum()


def fuse(estimates: list[Estimate], weights) -> Estimate:
    """Weighted combination of per-sensor estimates of the same kind."""
    w = np.asarray(weights, dtype=float)
    if len(estimates) != w.size or not estimates:
        raise ValueError("need one weight per estimate")
    kinds = {e.kind for e in estimates}
    if len(kinds) != 1:
        raise ValueError(f"cannot fuse mixed kinds {sorted(k.value for k in kinds)}")
    kind = kinds.pop()
    n_msgs = sum(e.n_messages for e in estimates)
    denom = estimates[0].denominator_used
    if any(e.status == NO_SAMPLE for e in estimates):
        return Estimate(kind, math.nan, n_msgs, denom, NO_SAMPLE)
    value = float(np.dot(w, [e.value for e in estimates]))
    status = CORRECTION_SKIPPED if any(e.status == CORRECTION_SKIPPED for e in estimates) else OK
    return Estimate(kind, value, n_msgs, denom, status)
