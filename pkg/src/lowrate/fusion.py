"""K-sensor network: each sensor sends one bit per hitting time to a fusion center.

The center sees only the message times (and the direction bit for two-sided
sensors). It combines per-sensor Hat/Check estimates with inverse-variance
weights and, when the sensors also run a squared-increment channel, estimates
a common sigma.
"""
from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import IncrementModel, UnsupportedModelError, rho_function
from .engine import (
    HittingOneSided,
    HittingTwoSided,
    simulate_paired,
    simulate_trace,
)
from .estimators import (
    NO_SAMPLE,
    OK,
    Estimate,
    EstimatorKind,
    estimate,
    fuse,
    overshoot_correct,
    weights_from_sigmas,
)
from .harness import ks_distance
from .rng import RngStream

MIN_CLT_REPS = 100
NETWORK_COLUMNS = ("rep", "checkpoint", "estimator", "value", "total_bits", "exclusions")
_G_OF = {EstimatorKind.HAT: EstimatorKind.GHAT, EstimatorKind.CHECK: EstimatorKind.GCHECK}
_FUSED_KINDS = (EstimatorKind.HAT, EstimatorKind.CHECK, EstimatorKind.GHAT, EstimatorKind.GCHECK)


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: int | str
    model: IncrementModel
    delta: float
    gamma: float | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"sensor {self.sensor_id}: delta must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError(f"sensor {self.sensor_id}: gamma must be positive when given")


def sensor_index(sensor_id) -> int:
    """Stable non-negative stream index for a sensor id."""
    if isinstance(sensor_id, (int, np.integer)) and sensor_id >= 0:
        return int(sensor_id)
    return zlib.crc32(str(sensor_id).encode("utf-8")) | (1 << 32)


def sensor_stream(master_seed: int, sensor_id, rep: int = 0) -> RngStream:
    return RngStream(master_seed, rep=rep, sensor=sensor_index(sensor_id), purpose="sensor")


def network_weights(sensors) -> np.ndarray:
    """Inverse-variance weights; equal weights when every sensor is noiseless."""
    sds = np.array([s.model.sd for s in sensors], dtype=float)
    if np.all(sds == 0):
        return np.full(len(sensors), 1.0 / len(sensors))
    return weights_from_sigmas(sds)


def _validate(sensors):
    if len(sensors) < 1:
        raise ValueError("a network needs at least one sensor")
    ids = [s.sensor_id for s in sensors]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate sensor ids in {ids}")
    means = {round(s.model.mean, 12) for s in sensors}
    if len(means) != 1:
        raise ValueError(f"sensors must share the drift, got means {sorted(means)}")


def _supports_correction(sensors, two_sided) -> bool:
    if two_sided:
        return False
    try:
        for s in sensors:
            rho_function(s.model)
    except UnsupportedModelError:
        return False
    return True


@dataclass
class CheckpointResult:
    t: int
    fused: dict
    per_sensor: dict
    sigma: Estimate | None
    total_bits: int
    exclusions: int


@dataclass
class NetworkRun:
    """Message logs of every sensor and the fusion-center output at each checkpoint.

    ``logs`` holds what crossed the channel: times and bits only.
    """

    sensors: list
    weights: np.ndarray
    logs: dict
    sigma_logs: dict
    checkpoints: list[CheckpointResult] = field(default_factory=list)

    def at(self, t: int) -> CheckpointResult:
        for c in self.checkpoints:
            if c.t == t:
                return c
        raise KeyError(f"no checkpoint at {t}")


def fuse_logs(sensors, weights, logs: dict, c: int, corrected: bool) -> tuple[dict, dict, int]:
    """Fused Hat/Check (and GHat/GCheck) from message logs cut at checkpoint ``c``."""
    per_sensor = {}
    exclusions = 0
    for s in sensors:
        cut = logs[s.sensor_id].at(c)
        ests = {k: estimate(cut, k) for k in (EstimatorKind.HAT, EstimatorKind.CHECK)}
        if corrected:
            for base in (EstimatorKind.HAT, EstimatorKind.CHECK):
                if ests[base].status != NO_SAMPLE:
                    g = overshoot_correct(ests[base], s.delta, s.model)
                else:
                    g = replace(ests[base], kind=_G_OF[base])
                ests[g.kind] = g
        exclusions += cut.N_t == 0
        per_sensor[s.sensor_id] = ests
    fused = {
        k: fuse([per_sensor[s.sensor_id][k] for s in sensors], weights)
        for k in _FUSED_KINDS
        if corrected or k in (EstimatorKind.HAT, EstimatorKind.CHECK)
    }
    return fused, per_sensor, exclusions


def _network_sigma(sensors, sigma_logs, c, mu_hat: Estimate) -> Estimate | None:
    """sqrt(sum_k w_k Gamma_k M_k / theta_k - mu_hat^2) with the common-sigma weights 1/K."""
    if any(s.gamma is None for s in sensors):
        return None
    cuts = [sigma_logs[s.sensor_id].at(c) for s in sensors]
    n_msgs = sum(z.M_t for z in cuts)
    if mu_hat.status == NO_SAMPLE or any(z.M_t == 0 for z in cuts):
        return Estimate(EstimatorKind.SIGMA, math.nan, n_msgs, "last_sample_time", NO_SAMPLE)
    second = np.mean([z.gamma * z.M_t / z.theta_of_t for z in cuts])
    inner = second - mu_hat.value**2
    return Estimate(
        EstimatorKind.SIGMA, math.sqrt(max(inner, 0.0)), n_msgs, "last_sample_time", OK,
        {"clamped": int(inner < 0)},
    )


def run_network(
    sensors: list[SensorSpec],
    checkpoints: list[int],
    master_seed: int,
    two_sided: bool = False,
    rep: int = 0,
    weights=None,
) -> NetworkRun:
    _validate(sensors)
    cps = sorted(int(c) for c in checkpoints)
    if not cps or cps[0] < 1:
        raise ValueError("checkpoints must be a nonempty list of positive integers")
    if len(set(cps)) != len(cps):
        raise ValueError("checkpoints must be distinct")
    w = network_weights(sensors) if weights is None else np.asarray(weights, dtype=float)
    horizon = cps[-1]
    logs, sigma_logs = {}, {}
    for s in sensors:
        scheme = (HittingTwoSided if two_sided else HittingOneSided)(s.delta)
        stream = sensor_stream(master_seed, s.sensor_id, rep)
        if s.gamma is None:
            tr = simulate_trace(s.model, scheme, horizon, stream, observe_S=False)
        else:
            tr, sigma_logs[s.sensor_id] = simulate_paired(s.model, scheme, s.gamma, horizon, stream, observe_S=False)
        logs[s.sensor_id] = tr.without_walk()
    run = NetworkRun(list(sensors), w, logs, sigma_logs)
    corrected = _supports_correction(sensors, two_sided)
    for c in cps:
        fused, per_sensor, excl = fuse_logs(sensors, w, logs, c, corrected)
        sigma = _network_sigma(sensors, sigma_logs, c, fused[EstimatorKind.HAT]) if sigma_logs else None
        bits = sum(logs[s.sensor_id].at(c).N_t for s in sensors)
        bits += sum(z.at(c).M_t for z in sigma_logs.values())
        run.checkpoints.append(CheckpointResult(c, fused, per_sensor, sigma, bits, excl))
    return run


def write_network_csv(path, runs) -> None:
    """``runs`` yields (rep, NetworkRun)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NETWORK_COLUMNS)
        for rep, run in runs:
            for cp in run.checkpoints:
                ests = dict(cp.fused)
                if cp.sigma is not None:
                    ests[EstimatorKind.SIGMA] = cp.sigma
                for kind, est in ests.items():
                    w.writerow([rep, cp.t, kind.value, repr(est.value), cp.total_bits, cp.exclusions])


@dataclass
class NetworkCLTSample:
    """Standardized fused estimates over replications.

    ``values`` use the scale sqrt(sum w_k^2 sigma_k^2 / t); ``paper_scale_values``
    use sqrt(K) * sigma_bar / sqrt(t) with sigma_bar^2 the average variance.
    """

    kind: EstimatorKind
    values: np.ndarray
    paper_scale_values: np.ndarray
    scale: float
    paper_scale: float
    exclusions: int
    sufficiency_mismatches: int

    @property
    def ks(self) -> float:
        return ks_distance(self.values)


def _standardize(x, mu, scale):
    diff = np.asarray(x, dtype=float) - mu
    if scale > 0:
        return diff / scale
    out = np.zeros_like(diff)
    nz = diff != 0
    out[nz] = np.sign(diff[nz]) * np.inf
    return out


def network_clt_sample(
    sensors: list[SensorSpec],
    t: int,
    reps: int,
    master_seed: int,
    kind=EstimatorKind.HAT,
    check_sufficiency: bool = True,
) -> NetworkCLTSample:
    """One standardized fused estimate per replication.

    With ``check_sufficiency`` each sensor path is simulated with the walk
    observed, and the fused value from the bit log is compared, bit for bit,
    with the one computed from the full trace.
    """
    _validate(sensors)
    if reps < MIN_CLT_REPS:
        raise ValueError(f"reps must be >= {MIN_CLT_REPS}, got {reps}")
    kind = EstimatorKind(kind)
    w = network_weights(sensors)
    corrected = kind in (EstimatorKind.GHAT, EstimatorKind.GCHECK)
    if corrected and not _supports_correction(sensors, False):
        raise UnsupportedModelError("overshoot correction needs every sensor family to support rho")
    values = []
    excluded = mismatches = 0
    for rep in range(reps):
        full, logs = {}, {}
        for s in sensors:
            tr = simulate_trace(s.model, HittingOneSided(s.delta), t, sensor_stream(master_seed, s.sensor_id, rep),
                                observe_S=check_sufficiency)
            full[s.sensor_id] = tr
            logs[s.sensor_id] = tr.without_walk()
        fused, _, _ = fuse_logs(sensors, w, logs, t, corrected)
        est = fused[kind]
        if check_sufficiency:
            ref, _, _ = fuse_logs(sensors, w, full, t, corrected)
            same = ref[kind].status == est.status and (
                ref[kind].value == est.value or (math.isnan(ref[kind].value) and math.isnan(est.value))
            )
            mismatches += not same
        if est.status == NO_SAMPLE:
            excluded += 1
            continue
        values.append(est.value)
    mu = sensors[0].model.mean
    sds = np.array([s.model.sd for s in sensors])
    scale = math.sqrt(float(np.sum(w**2 * sds**2)) / t)
    paper_scale = math.sqrt(len(sensors)) * math.sqrt(float(np.mean(sds**2))) / math.sqrt(t)
    return NetworkCLTSample(
        kind,
        _standardize(values, mu, scale),
        _standardize(values, mu, paper_scale),
        scale,
        paper_scale,
        excluded,
        mismatches,
    )
