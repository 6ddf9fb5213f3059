"""Random-walk paths observed through a sampling scheme.

Time is integer valued. Hitting schemes sample the walk whenever it has moved
by ``delta`` since the previous sample; exogenous schemes sample it at the
epochs of an independent renewal process. Paths are drawn in fixed-size blocks
and scanned online, so memory does not grow with the horizon.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numba
import numpy as np

from .distributions import IncrementModel
from .rng import RngStream

BLOCK = 1 << 16
_SCHEDULE_KEY = 1
_FP_CELLS = 4_000_000  # max active*block cells held at once by first_passage_batch


# --------------------------------------------------------------------------- schemes


@dataclass(frozen=True)
class HittingOneSided:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"threshold must be positive, got {self.delta}")


@dataclass(frozen=True)
class HittingTwoSided:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"threshold must be positive, got {self.delta}")


class Interarrival:
    """Interarrival law of an exogenous renewal scheme, as placed on the integer grid."""

    nominal: float
    rounded = False

    def draw(self, gen: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean**2

    @property
    def positive_support(self) -> bool:
        return True

    def pos_part_moment(self, s: int) -> float:
        if s != 2:
            raise ValueError("only the second moment is tabulated for interarrivals")
        return self.second_moment


@dataclass(frozen=True)
class Exponential(Interarrival):
    """Exponential(mean) rounded up to the next integer.

    ceil(Exp) is geometric with success probability 1 - exp(-1/mean), which
    gives the exact moments of the placed interarrival.
    """

    nominal: float
    rounded = True

    def __post_init__(self):
        if not self.nominal > 0:
            raise ValueError("mean interarrival must be positive")

    @property
    def _p(self):
        return -math.expm1(-1.0 / self.nominal)

    def continuous_moment(self, n: int) -> float:
        """E[E^n] = n! mean^n for the unrounded draw."""
        return math.factorial(n) * self.nominal**n

    def draw(self, gen, size):
        return np.maximum(np.ceil(gen.exponential(self.nominal, size)), 1).astype(np.int64)

    @property
    def mean(self):
        return 1.0 / self._p

    @property
    def second_moment(self):
        p = self._p
        return (2 - p) / p**2


@dataclass(frozen=True)
class Geometric(Interarrival):
    """Binomial-process sampling: each instant sampled independently with probability 1/mean."""

    nominal: float

    def __post_init__(self):
        if self.nominal < 1:
            raise ValueError("geometric mean interarrival must be >= 1")

    def draw(self, gen, size):
        return gen.geometric(1.0 / self.nominal, size).astype(np.int64)

    @property
    def mean(self):
        return float(self.nominal)

    @property
    def second_moment(self):
        d = self.nominal
        return d * (2 * d - 1)


@dataclass(frozen=True)
class DeterministicInterarrival(Interarrival):
    nominal: int

    def __post_init__(self):
        if self.nominal < 1 or int(self.nominal) != self.nominal:
            raise ValueError("deterministic interarrival must be an integer >= 1")

    def draw(self, gen, size):
        return np.full(size, int(self.nominal), dtype=np.int64)

    @property
    def mean(self):
        return float(self.nominal)

    @property
    def second_moment(self):
        return float(self.nominal) ** 2


@dataclass(frozen=True)
class ExogenousRenewal:
    interarrival: Interarrival


SamplingScheme = Union[HittingOneSided, HittingTwoSided, ExogenousRenewal]


def scheme_threshold(scheme: SamplingScheme) -> float:
    return 0.0 if isinstance(scheme, ExogenousRenewal) else float(scheme.delta)


# --------------------------------------------------------------------------- traces


@dataclass(frozen=True, eq=False)
class RenewalTrace:
    """Event record of one path up to horizon ``t``.

    ``s`` is None when the walk value was not observed (1-bit channel).
    ``next_tau`` is the first sampling time after ``t`` when it was simulated.
    """

    t: int
    tau: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    s: np.ndarray | None
    delta: float
    two_sided: bool = False
    next_tau: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def N_t(self) -> int:
        return int(self.tau.size)

    @property
    def tau_of_t(self) -> int:
        return int(self.tau[-1]) if self.tau.size else 0

    @property
    def observed(self) -> bool:
        return self.s is not None

    @property
    def events(self) -> list[tuple]:
        s = self.s if self.s is not None else [None] * self.N_t
        return [
            (int(a), int(b), float(c), None if d is None else float(d))
            for a, b, c, d in zip(self.tau, self.z, self.eta, s)
        ]

    def at(self, c: int) -> RenewalTrace:
        """The trace as seen at checkpoint ``c <= t``: events with tau_n <= c only."""
        if c > self.t:
            raise ValueError(f"checkpoint {c} beyond horizon {self.t}")
        k = int(np.searchsorted(self.tau, c, side="right"))
        nxt = int(self.tau[k]) if k < self.tau.size else self.next_tau
        return RenewalTrace(
            t=int(c),
            tau=self.tau[:k],
            z=self.z[:k],
            eta=self.eta[:k],
            s=None if self.s is None else self.s[:k],
            delta=self.delta,
            two_sided=self.two_sided,
            next_tau=nxt,
            meta=self.meta,
        )

    def without_walk(self) -> RenewalTrace:
        """Drop everything the 1-bit channel does not carry (walk values, overshoots)."""
        return RenewalTrace(
            t=self.t,
            tau=self.tau,
            z=self.z,
            eta=np.full(self.tau.size, np.nan),
            s=None,
            delta=self.delta,
            two_sided=self.two_sided,
            next_tau=self.next_tau,
            meta=self.meta,
        )


@dataclass(frozen=True, eq=False)
class SecondMomentTrace:
    """Hitting times of Z_t = X_1^2 + ... + X_t^2 with threshold ``gamma``."""

    t: int
    theta: np.ndarray
    gamma: float

    @property
    def M_t(self) -> int:
        return int(self.theta.size)

    @property
    def theta_of_t(self) -> int:
        return int(self.theta[-1]) if self.theta.size else 0

    def at(self, c: int) -> SecondMomentTrace:
        if c > self.t:
            raise ValueError(f"checkpoint {c} beyond horizon {self.t}")
        k = int(np.searchsorted(self.theta, c, side="right"))
        return SecondMomentTrace(int(c), self.theta[:k], self.gamma)


@dataclass(frozen=True)
class FirstPassageRecord:
    nu: int
    tau_at_nu: float
    overshoot: float
    level: float
    prev: float  # partial sum at index nu - 1


class TraceStats(NamedTuple):
    N_t: int
    tau_of_t: int
    age: int
    bit_sum: int
    overshoot_sum: float
    s_at_tau: float | None = None


def trace_stats(trace: RenewalTrace) -> TraceStats:
    n = trace.N_t
    bits = int(np.sum(2 * trace.z.astype(np.int64) - 1)) if n else 0
    eta = float(np.sum(trace.eta)) if n else 0.0
    s_last = None
    if trace.s is not None:
        s_last = float(trace.s[-1]) if n else 0.0
    return TraceStats(n, trace.tau_of_t, trace.t - trace.tau_of_t, bits, eta, s_last)


# --------------------------------------------------------------------------- kernels


@numba.njit(cache=True, nogil=True)
def _scan_block(x, offset, thr, two_sided, square, state, tau_out, z_out, eta_out, s_out):
    """Feed one block of increments; state = [walk value, value at last sample]."""
    s = state[0]
    anchor = state[1]
    k = 0
    for i in range(x.size):
        v = x[i]
        if square:
            v = v * v
        s += v
        d = s - anchor
        if d >= thr:
            tau_out[k] = offset + i + 1
            z_out[k] = 1
            eta_out[k] = d - thr
            s_out[k] = s
            k += 1
            anchor = s
        elif two_sided and d <= -thr:
            tau_out[k] = offset + i + 1
            z_out[k] = 0
            eta_out[k] = -d - thr
            s_out[k] = s
            k += 1
            anchor = s
    state[0] = s
    state[1] = anchor
    return k


@numba.njit(cache=True, nogil=True)
def hitting_stats(x, thresholds, two_sided):
    """Horizon statistics of one path for several thresholds at once.

    Returns arrays (N, tau_last, s_last, bit_sum, eta_sum), one entry per threshold.
    """
    m = thresholds.size
    n = np.zeros(m, np.int64)
    last = np.zeros(m, np.int64)
    s_last = np.zeros(m)
    bits = np.zeros(m, np.int64)
    eta = np.zeros(m)
    for j in range(m):
        thr = thresholds[j]
        s = 0.0
        anchor = 0.0
        for i in range(x.size):
            s += x[i]
            d = s - anchor
            if d >= thr:
                n[j] += 1
                bits[j] += 1
                eta[j] += d - thr
                last[j] = i + 1
                s_last[j] = s
                anchor = s
            elif two_sided and d <= -thr:
                n[j] += 1
                bits[j] -= 1
                eta[j] += -d - thr
                last[j] = i + 1
                s_last[j] = s
                anchor = s
    return n, last, s_last, bits, eta


@numba.njit(cache=True, nogil=True)
def hitting_stats_next(x, thresholds, two_sided, horizon):
    """``hitting_stats`` over x[:horizon] plus, per threshold, the first hit after it.

    The extra column is -1 when the path ``x`` ends before that hit.
    """
    m = thresholds.size
    n = np.zeros(m, np.int64)
    last = np.zeros(m, np.int64)
    s_last = np.zeros(m)
    bits = np.zeros(m, np.int64)
    eta = np.zeros(m)
    nxt = np.full(m, -1, np.int64)
    for j in range(m):
        thr = thresholds[j]
        s = 0.0
        anchor = 0.0
        for i in range(x.size):
            s += x[i]
            d = s - anchor
            up = d >= thr
            if up or (two_sided and d <= -thr):
                if i >= horizon:
                    nxt[j] = i + 1
                    break
                n[j] += 1
                if up:
                    bits[j] += 1
                    eta[j] += d - thr
                else:
                    bits[j] -= 1
                    eta[j] += -d - thr
                last[j] = i + 1
                s_last[j] = s
                anchor = s
    return n, last, s_last, bits, eta, nxt


class _Channel:
    def __init__(self, thr, two_sided=False, square=False):
        self.thr = float(thr)
        self.two_sided = bool(two_sided)
        self.square = bool(square)
        self.state = np.zeros(2)
        self.parts: list[tuple] = []
        self.next_tau: int | None = None

    def feed(self, x, offset, horizon):
        n = x.size
        tau = np.empty(n, np.int64)
        z = np.empty(n, np.int8)
        eta = np.empty(n)
        s = np.empty(n)
        k = _scan_block(x, offset, self.thr, self.two_sided, self.square, self.state, tau, z, eta, s)
        if k:
            inside = int(np.searchsorted(tau[:k], horizon, side="right"))
            if inside < k and self.next_tau is None:
                self.next_tau = int(tau[inside])
            self.parts.append((tau[:inside], z[:inside], eta[:inside], s[:inside]))

    def arrays(self):
        if not self.parts:
            return (np.empty(0, np.int64), np.empty(0, np.int8), np.empty(0), np.empty(0))
        return tuple(np.concatenate(p) for p in zip(*self.parts))


def _run_channels(model: IncrementModel, channels: list[_Channel], t: int, gen, until_next=False):
    offset = 0
    while offset < t:
        n = min(BLOCK, t - offset)
        x = np.asarray(model.draw(gen, n), dtype=float)
        for ch in channels:
            ch.feed(x, offset, t)
        offset += n
    if until_next:
        if model.mean <= 0 and not channels[0].two_sided:
            raise ValueError("continuing to the next sample needs positive drift")
        while channels[0].next_tau is None:
            x = np.asarray(model.draw(gen, BLOCK), dtype=float)
            channels[0].feed(x, offset, t)
            offset += BLOCK


def _check_horizon(t):
    if int(t) != t or t < 1:
        raise ValueError(f"horizon must be an integer >= 1, got {t}")


def simulate_trace(
    model: IncrementModel,
    scheme: SamplingScheme,
    t: int,
    stream: RngStream,
    observe_S: bool = True,
    until_next: bool = False,
) -> RenewalTrace:
    """Simulate one path to horizon ``t`` and record its sampling events.

    With ``until_next`` the walk is continued past ``t`` to the next sampling
    time, stored as ``next_tau`` (events after ``t`` are not recorded).
    """
    _check_horizon(t)
    t = int(t)
    if isinstance(scheme, ExogenousRenewal):
        return _simulate_exogenous(model, scheme, t, stream, observe_S, until_next)
    two_sided = isinstance(scheme, HittingTwoSided)
    ch = _Channel(scheme.delta, two_sided)
    _run_channels(model, [ch], t, stream.gen, until_next)
    tau, z, eta, s = ch.arrays()
    return RenewalTrace(
        t=t,
        tau=tau,
        z=z,
        eta=eta,
        s=s if observe_S else None,
        delta=float(scheme.delta),
        two_sided=two_sided,
        next_tau=ch.next_tau,
    )


def _simulate_exogenous(model, scheme, t, stream, observe_S, until_next):
    sched = stream.child(_SCHEDULE_KEY).gen
    ia = scheme.interarrival
    chunk = max(16, int(1.25 * t / ia.mean) + 16)
    times = []
    last = 0
    while last <= t:
        c = last + np.cumsum(ia.draw(sched, chunk))
        times.append(c)
        last = int(c[-1])
    times = np.concatenate(times)
    k = int(np.searchsorted(times, t, side="right"))
    tau = times[:k].astype(np.int64)
    s = None
    if observe_S:
        s = np.empty(k)
        gen = stream.gen
        offset, acc, j = 0, 0.0, 0
        while offset < t and j < k:
            n = min(BLOCK, t - offset)
            cs = acc + np.cumsum(np.asarray(model.draw(gen, n), dtype=float))
            hi = int(np.searchsorted(tau, offset + n, side="right"))
            s[j:hi] = cs[tau[j:hi] - offset - 1]
            j = hi
            acc = float(cs[-1])
            offset += n
    meta = {"exponential_rounded_up": True} if ia.rounded else {}
    return RenewalTrace(
        t=t,
        tau=tau,
        z=np.ones(k, np.int8),
        eta=np.zeros(k),
        s=s,
        delta=0.0,
        next_tau=int(times[k]) if until_next else None,
        meta=meta,
    )


def simulate_second_moment_trace(model: IncrementModel, gamma: float, t: int, stream: RngStream) -> SecondMomentTrace:
    """Hitting times of the squared-increment walk.

    Draws X exactly as ``simulate_trace`` does, so a fresh stream with the same
    identity yields the second-moment channel of the same path.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    _check_horizon(t)
    ch = _Channel(gamma, square=True)
    _run_channels(model, [ch], int(t), stream.gen)
    return SecondMomentTrace(int(t), ch.arrays()[0], float(gamma))


def simulate_paired(
    model: IncrementModel,
    scheme: HittingOneSided | HittingTwoSided,
    gamma: float,
    t: int,
    stream: RngStream,
    observe_S: bool = True,
) -> tuple[RenewalTrace, SecondMomentTrace]:
    """Mean channel and second-moment channel of one path in a single pass."""
    _check_horizon(t)
    t = int(t)
    two_sided = isinstance(scheme, HittingTwoSided)
    mu_ch = _Channel(scheme.delta, two_sided)
    z_ch = _Channel(gamma, square=True)
    _run_channels(model, [mu_ch, z_ch], t, stream.gen)
    tau, z, eta, s = mu_ch.arrays()
    trace = RenewalTrace(t, tau, z, eta, s if observe_S else None, float(scheme.delta), two_sided)
    return trace, SecondMomentTrace(t, z_ch.arrays()[0], float(gamma))


def draw_path(model: IncrementModel, t: int, stream: RngStream) -> np.ndarray:
    """The increments X_1..X_t that ``simulate_trace`` would scan for ``stream``."""
    gen = stream.gen
    return np.concatenate(
        [np.asarray(model.draw(gen, min(BLOCK, t - o)), dtype=float) for o in range(0, t, BLOCK)]
    )


# --------------------------------------------------------------------------- first passage


class FirstPassageBatch(NamedTuple):
    nu: np.ndarray
    tau_at_nu: np.ndarray
    prev: np.ndarray
    level: float

    @property
    def overshoot(self) -> np.ndarray:
        return self.tau_at_nu - self.level


def first_passage_batch(
    model: IncrementModel, level: float, reps: int, stream: RngStream, strict: bool = True
) -> FirstPassageBatch:
    """First index at which the partial sums exceed ``level`` (``>=`` when not strict)."""
    if not model.mean > 0:
        raise ValueError("first passage needs a positive mean")
    if level < 0:
        raise ValueError("level must be non-negative")
    gen = stream.gen
    block = int(min(1024, max(8, math.ceil(1.25 * level / model.mean) + 8)))
    chunk = max(1, _FP_CELLS // block)
    nu = np.empty(reps, np.int64)
    tau = np.empty(reps)
    prev = np.empty(reps)
    for lo in range(0, reps, chunk):
        idx = np.arange(lo, min(reps, lo + chunk))
        s = np.zeros(idx.size)
        steps = np.zeros(idx.size, np.int64)
        b = block
        while idx.size:
            x = np.asarray(model.draw(gen, (idx.size, b)), dtype=float)
            cs = s[:, None] + np.cumsum(x, axis=1)
            hit = cs > level if strict else cs >= level
            got = hit.any(axis=1)
            first = hit.argmax(axis=1)
            rows = np.flatnonzero(got)
            j = first[rows]
            nu[idx[rows]] = steps[rows] + j + 1
            tau[idx[rows]] = cs[rows, j]
            before = np.where(j > 0, cs[rows, np.maximum(j - 1, 0)], s[rows])
            prev[idx[rows]] = before
            keep = ~got
            idx, s, steps = idx[keep], cs[keep, -1], steps[keep] + b
            b = min(b, 256)
    return FirstPassageBatch(nu, tau, prev, float(level))


def first_passage(model: IncrementModel, level: float, stream: RngStream) -> FirstPassageRecord:
    fp = first_passage_batch(model, level, 1, stream)
    tau = float(fp.tau_at_nu[0])
    return FirstPassageRecord(int(fp.nu[0]), tau, tau - level, float(level), float(fp.prev[0]))


# --------------------------------------------------------------------------- output


TRACE_COLUMNS = ("rep", "n", "tau_n", "z_n", "eta_n", "S_tau_n")


def write_trace_csv(path, traces) -> None:
    """One row per event; ``traces`` yields (rep, RenewalTrace)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rep, tr in traces:
            for n, (tau, z, eta, s) in enumerate(tr.events, start=1):
                w.writerow([rep, n, tau, z, repr(eta), "" if s is None else repr(s)])
