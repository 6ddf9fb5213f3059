"""Increment distribution families, their moments and limiting average overshoots."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .rng import RngStream

SERIES_TOL = 1e-12
SERIES_CAP = 10_000_000


class UnsupportedModelError(ValueError):
    """Raised when a closed form does not exist for the requested family."""


class IncrementModel:
    """Base class for the increment families of a random walk.

    Subclasses are frozen dataclasses. ``with_mean`` returns the member of the
    same family with a different mean, following the family's variance link;
    it is what the overshoot correction plugs an estimate into.
    """

    lattice = False

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def sd(self) -> float:
        raise NotImplementedError

    @property
    def variance(self) -> float:
        return self.sd**2

    @property
    def positive_support(self) -> bool:
        return False

    def draw(self, gen: np.random.Generator, size=None):
        raise NotImplementedError

    def with_mean(self, mu: float) -> IncrementModel:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianCurved(IncrementModel):
    """N(mu, c * mu^2)."""

    mu: float
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")

    @property
    def mean(self):
        return float(self.mu)

    @property
    def sd(self):
        return math.sqrt(self.c) * abs(self.mu)

    @property
    def variance(self):
        return self.c * self.mu**2

    def draw(self, gen, size=None):
        return gen.normal(self.mu, self.sd, size)

    def with_mean(self, mu):
        return GaussianCurved(mu, self.c)


@dataclass(frozen=True)
class Gaussian(IncrementModel):
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def mean(self):
        return float(self.mu)

    @property
    def sd(self):
        return float(self.sigma)

    def draw(self, gen, size=None):
        return gen.normal(self.mu, self.sigma, size)

    def with_mean(self, mu):
        return Gaussian(mu, self.sigma)


@dataclass(frozen=True)
class Gamma(IncrementModel):
    """Gamma with shape ``k`` and rate ``lam``; sd = mean / sqrt(k)."""

    k: float
    lam: float

    def __post_init__(self):
        if not (self.k > 0 and self.lam > 0):
            raise ValueError(f"Gamma needs k > 0 and lam > 0, got k={self.k}, lam={self.lam}")

    @property
    def mean(self):
        return self.k / self.lam

    @property
    def sd(self):
        return math.sqrt(self.k) / self.lam

    @property
    def positive_support(self):
        return True

    def draw(self, gen, size=None):
        return gen.gamma(self.k, 1.0 / self.lam, size)

    def with_mean(self, mu):
        return Gamma(self.k, self.k / mu)


@dataclass(frozen=True)
class Deterministic(IncrementModel):
    mu: float

    @property
    def mean(self):
        return float(self.mu)

    @property
    def sd(self):
        return 0.0

    @property
    def positive_support(self):
        return self.mu > 0

    def draw(self, gen, size=None):
        if size is None:
            return float(self.mu)
        return np.full(size, float(self.mu))

    def with_mean(self, mu):
        return Deterministic(mu)


@dataclass(frozen=True)
class TwoPointLattice(IncrementModel):
    """X = a with probability p, b otherwise."""

    a: float
    b: float
    p: float
    lattice = True

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError(f"p must be a probability, got {self.p}")

    @property
    def mean(self):
        return self.p * self.a + (1 - self.p) * self.b

    @property
    def sd(self):
        return abs(self.a - self.b) * math.sqrt(self.p * (1 - self.p))

    @property
    def positive_support(self):
        support = ([self.a] if self.p > 0 else []) + ([self.b] if self.p < 1 else [])
        return min(support) > 0

    def draw(self, gen, size=None):
        u = gen.random(size)
        out = np.where(u < self.p, self.a, self.b)
        return float(out) if size is None else out

    def with_mean(self, mu):
        raise UnsupportedModelError("lattice family has no plug-in mean link")


def sample(model: IncrementModel, stream: RngStream) -> float:
    """One draw of ``model``; advances ``stream``."""
    return float(model.draw(stream.gen))


# --------------------------------------------------------------------------- moments


def _check_order(r):
    if not r > 0:
        raise ValueError(f"moment order must be positive, got {r}")


def _is_int(r) -> bool:
    return float(r).is_integer()


def _std_normal_upper_partial(j: int, b: float) -> float:
    """E[Z^j ; Z > b] for standard normal Z."""
    m_prev, m = float(stats.norm.sf(b)), float(stats.norm.pdf(b))  # j = 0, 1
    if j == 0:
        return m_prev
    for i in range(2, j + 1):
        m_prev, m = m, b ** (i - 1) * stats.norm.pdf(b) + (i - 1) * m_prev
    return m


def abs_central_moment(model: IncrementModel, r: float) -> float | None:
    """E|X - mu|^r in closed form, or None when no closed form is implemented."""
    _check_order(r)
    if isinstance(model, (Gaussian, GaussianCurved)):
        s = model.sd
        return float(s**r * 2 ** (r / 2) * special.gamma((r + 1) / 2) / math.sqrt(math.pi))
    if isinstance(model, Deterministic):
        return 0.0
    if isinstance(model, TwoPointLattice):
        m = model.mean
        return model.p * abs(model.a - m) ** r + (1 - model.p) * abs(model.b - m) ** r
    if isinstance(model, Gamma):
        if not _is_int(r):
            return None
        r = int(r)
        k, lam, mu = model.k, model.lam, model.mean
        # split at the mean; partial raw moments via regularized incomplete gamma
        total = 0.0
        for j in range(r + 1):
            raw = math.exp(special.gammaln(k + j) - special.gammaln(k)) / lam**j
            upper = raw * special.gammaincc(k + j, k)
            lower = raw * special.gammainc(k + j, k)
            coef = math.comb(r, j) * (-mu) ** (r - j)
            total += coef * upper + coef * (-1) ** r * lower
        return float(total)
    return None


def pos_part_moment(model: IncrementModel, s: float) -> float | None:
    """E[(X^+)^s] in closed form, or None when no closed form is implemented."""
    _check_order(s)
    if isinstance(model, Gamma):
        return float(math.exp(special.gammaln(model.k + s) - special.gammaln(model.k)) / model.lam**s)
    if isinstance(model, Deterministic):
        return max(model.mu, 0.0) ** s
    if isinstance(model, TwoPointLattice):
        return model.p * max(model.a, 0.0) ** s + (1 - model.p) * max(model.b, 0.0) ** s
    if isinstance(model, (Gaussian, GaussianCurved)):
        if not _is_int(s):
            return None
        s = int(s)
        mu, sd = model.mean, model.sd
        if sd == 0:
            return max(mu, 0.0) ** s
        b = -mu / sd
        return float(sum(
            math.comb(s, j) * mu ** (s - j) * sd**j * _std_normal_upper_partial(j, b)
            for j in range(s + 1)
        ))
    return None


@dataclass(frozen=True)
class MomentSummary:
    mean: float
    variance: float
    abs_central: dict
    pos_part: dict

    def abs_central_moment(self, r: int) -> float | None:
        _check_order(r)
        return self.abs_central.get(r)

    def pos_part_moment(self, s: int) -> float | None:
        _check_order(s)
        return self.pos_part.get(s)

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean**2


def moments(model: IncrementModel, orders=(1, 2, 3, 4)) -> MomentSummary:
    """Closed-form moment table of ``model`` for the given orders."""
    for r in orders:
        _check_order(r)
    return MomentSummary(
        mean=model.mean,
        variance=model.variance,
        abs_central={r: abs_central_moment(model, r) for r in orders},
        pos_part={s: pos_part_moment(model, s) for s in orders},
    )


# --------------------------------------------------------------------------- overshoot


def _overshoot_term(b):
    return stats.norm.pdf(b) - b * stats.norm.sf(b)


def _gaussian_series(scale: float, tol: float, cap: int = SERIES_CAP) -> float:
    """sum_{n>=1} f(scale*sqrt(n)) / sqrt(n), truncated once a term is below ``tol``."""
    total = 0.0
    start, chunk = 1, 1024
    while start <= cap:
        n = np.arange(start, min(start + chunk, cap + 1), dtype=float)
        terms = _overshoot_term(scale * np.sqrt(n)) / np.sqrt(n)
        small = np.flatnonzero(terms < tol)
        if small.size:
            return total + float(terms[: small[0]].sum())
        total += float(terms.sum())
        start += chunk
        chunk *= 2
    return total


def gaussian_w_constant(c: float, tol: float = SERIES_TOL) -> float:
    """Slope w_c of the limiting average overshoot rho(mu) = w_c * mu for N(mu, c mu^2)."""
    if not (c > 0 and tol > 0):
        raise ValueError("need c > 0 and tol > 0")
    # f(b)/b with b = sqrt(n/c) equals sqrt(c) * f(b)/sqrt(n)
    return (1 + c) / 2 - math.sqrt(c) * _gaussian_series(1 / math.sqrt(c), tol)


def rho_closed_form(model: IncrementModel, tol: float = SERIES_TOL) -> float:
    """Limiting average overshoot E[H^2] / (2 E[H]) of the first ascending ladder height H."""
    if model.lattice:
        raise UnsupportedModelError(f"{type(model).__name__} is lattice; rho needs non-lattice increments")
    mu = model.mean
    if not mu > 0:
        raise ValueError(f"rho needs a positive mean, got {mu}")
    if isinstance(model, (Gamma, Deterministic)):
        return mu / 2 + model.variance / (2 * mu)
    if isinstance(model, (Gaussian, GaussianCurved)):
        sd = model.sd
        if sd == 0:
            return mu / 2
        return (mu**2 + sd**2) / (2 * mu) - sd * _gaussian_series(mu / sd, tol)
    raise UnsupportedModelError(f"no closed form for {type(model).__name__}")


@functools.lru_cache(maxsize=256)
def _cached_w(c: float) -> float:
    return gaussian_w_constant(c)


def rho_function(model: IncrementModel):
    """Vectorised x -> rho(x) along the model's variance link (x > 0)."""
    if model.lattice:
        raise UnsupportedModelError(f"{type(model).__name__} is lattice")
    if isinstance(model, GaussianCurved):
        w = _cached_w(float(model.c))
        return lambda x: w * np.asarray(x, dtype=float)
    if isinstance(model, Gamma):
        w = (1 + 1 / model.k) / 2
        return lambda x: w * np.asarray(x, dtype=float)
    if isinstance(model, Deterministic):
        return lambda x: 0.5 * np.asarray(x, dtype=float)
    if isinstance(model, Gaussian):
        sigma = model.sigma

        def rho(x):
            return np.vectorize(lambda v: rho_closed_form(Gaussian(v, sigma)), otypes=[float])(x)

        return rho
    raise UnsupportedModelError(f"no closed form for {type(model).__name__}")


class LadderMoments(NamedTuple):
    m1: float
    m2: float
    rho_hat: float
    se: float


def ladder_height_moments(model: IncrementModel, reps: int, stream: RngStream) -> LadderMoments:
    """Monte Carlo moments of the first ascending ladder height S at inf{t: S_t > 0}."""
    if not model.mean > 0:
        raise ValueError("ladder time is only a.s. finite for a positive mean")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    gen = stream.gen
    s = np.zeros(reps)
    h = np.empty(reps)
    active = np.arange(reps)
    while active.size:
        s[active] += model.draw(gen, active.size)
        up = s[active] > 0
        h[active[up]] = s[active[up]]
        active = active[~up]
    m1, m2 = h.mean(), np.mean(h * h)
    rho_hat = m2 / (2 * m1)
    infl = (h * h - m2) / (2 * m1) - m2 * (h - m1) / (2 * m1 * m1)
    se = float(infl.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    return LadderMoments(float(m1), float(m2), float(rho_hat), se)
