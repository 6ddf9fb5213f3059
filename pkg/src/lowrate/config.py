"""INI run configurations, validated completely before anything is simulated."""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .distributions import Deterministic, Gamma, Gaussian, GaussianCurved, IncrementModel, TwoPointLattice
from .estimators import MU_KINDS, EstimatorKind
from .harness import SCHEMES

KINDS = ("sweep", "clt", "verify", "fusion")
CHECKS = ("wald", "lorden", "lr", "anscombe", "rho")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry as section.key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"[{key}] {message}")
        self.key = key


_MODEL_KEYS = {
    "gaussian_curved": ("mu", "c"),
    "gaussian": ("mu", "sigma"),
    "gamma": ("k", "lam"),
    "deterministic": ("mu",),
    "two_point": ("a", "b", "p"),
}

_ALLOWED = {
    "experiment": {"kind", "id", "seed", "reps", "t", "output"},
    "model": {"family", "mu", "c", "sigma", "k", "lam", "a", "b", "p"},
    "scheme": {"type", "grid", "grid_power"},
    "sweep": {"estimators", "ordering"},
    "clt": {"estimator", "plug_sigma", "gamma", "gamma_power", "max_ks", "max_abs_mean", "max_rel_error"},
    "verify": {"checks", "levels", "grid", "r", "max_slope", "ladder_reps", "direct_reps", "level", "interarrival",
               "interarrival_delta"},
    "fusion": {"mode", "checkpoints", "two_sided", "max_ks"},
}
_SENSOR_KEYS = {"family", "mu", "sigma_or_c", "delta", "delta_power", "gamma"}


@dataclass
class SensorConfig:
    sensor_id: str
    model: IncrementModel
    delta: float
    gamma: float | None


@dataclass
class RunConfig:
    kind: str
    experiment_id: str
    seed: int
    reps: int
    t: int
    output: str
    model: IncrementModel | None = None
    scheme: str = "hitting"
    grid: tuple = ()
    sections: dict = field(default_factory=dict)
    sensors: list = field(default_factory=list)


def _get(sec, name, key, conv, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"{name}.{key}", "is required")
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}.{key}", f"cannot parse {raw!r}: {exc}") from None


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _int(raw: str) -> int:
    v = float(raw)
    if not v.is_integer():
        raise ValueError("expected an integer")
    return int(v)


def _kinds(raw: str) -> tuple:
    return tuple(EstimatorKind(v.strip()) for v in raw.split(",") if v.strip())


def _pairs(raw: str) -> tuple:
    out = []
    for item in raw.replace(",", " ").split():
        d, t = item.split(":")
        out.append((float(d), int(float(t))))
    return tuple(out)


def _model(sec, name) -> IncrementModel:
    family = _get(sec, name, "family", str, required=True)
    if family not in _MODEL_KEYS:
        raise ConfigError(f"{name}.family", f"unknown family {family!r}; choose from {sorted(_MODEL_KEYS)}")
    keys = _MODEL_KEYS[family]
    extra = {k for k in sec if k != "family"} - set(keys)
    if family == "gamma":
        extra -= {"mu"}
    if extra:
        raise ConfigError(f"{name}.{sorted(extra)[0]}", f"not a parameter of family {family}")
    vals = {}
    for k in keys:
        if family == "gamma" and k == "lam" and "lam" not in sec:
            mu = _get(sec, name, "mu", float, required=True)
            vals["lam"] = _get(sec, name, "k", float, required=True) / mu
            continue
        vals[k] = _get(sec, name, k, float, required=True)
    ctor = {"gaussian_curved": GaussianCurved, "gaussian": Gaussian, "gamma": Gamma,
            "deterministic": Deterministic, "two_point": TwoPointLattice}[family]
    try:
        return ctor(**vals)
    except ValueError as exc:
        raise ConfigError(f"{name}.family", str(exc)) from None


def _sensor_model(sec, name) -> IncrementModel:
    family = _get(sec, name, "family", str, required=True)
    mu = _get(sec, name, "mu", float, required=True)
    s = _get(sec, name, "sigma_or_c", float, default=0.0)
    try:
        if family == "gaussian_curved":
            return GaussianCurved(mu, s)
        if family == "gaussian":
            return Gaussian(mu, s)
        if family == "gamma":
            k = (mu / s) ** 2
            return Gamma(k, k / mu)
        if family == "deterministic":
            return Deterministic(mu)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{name}.sigma_or_c", str(exc)) from None
    raise ConfigError(f"{name}.family", f"unsupported sensor family {family!r}")


def parse_config(path, seed: int | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise ConfigError("file", f"config {path} does not exist") from None
    except configparser.Error as exc:
        raise ConfigError("file", f"malformed config: {exc}") from None
    for name in cp.sections():
        allowed = _SENSOR_KEYS if name.startswith("sensor.") else _ALLOWED.get(name)
        if allowed is None:
            raise ConfigError(name, "unknown section")
        for key in cp[name]:
            if key not in allowed:
                raise ConfigError(f"{name}.{key}", "unknown key")
    if "experiment" not in cp:
        raise ConfigError("experiment", "section is required")
    ex = cp["experiment"]
    kind = _get(ex, "experiment", "kind", str, required=True)
    if kind not in KINDS:
        raise ConfigError("experiment.kind", f"must be one of {KINDS}")
    cfg = RunConfig(
        kind=kind,
        experiment_id=_get(ex, "experiment", "id", str, default=kind),
        seed=seed if seed is not None else _get(ex, "experiment", "seed", _int, default=0),
        reps=_get(ex, "experiment", "reps", _int, required=True),
        t=_get(ex, "experiment", "t", _int, default=0),
        output=_get(ex, "experiment", "output", str, default="out"),
        sections={name: dict(cp[name]) for name in cp.sections()},
    )
    if cfg.reps < 1:
        raise ConfigError("experiment.reps", "must be >= 1")
    if "model" in cp:
        cfg.model = _model(cp["model"], "model")
    if "scheme" in cp:
        sc = cp["scheme"]
        cfg.scheme = _get(sc, "scheme", "type", str, default="hitting")
        if cfg.scheme not in SCHEMES:
            raise ConfigError("scheme.type", f"must be one of {sorted(SCHEMES)}")
        grid = _get(sc, "scheme", "grid", _floats)
        powers = _get(sc, "scheme", "grid_power", _floats)
        if grid is not None and powers is not None:
            raise ConfigError("scheme.grid_power", "give either grid or grid_power, not both")
        if powers is not None:
            grid = tuple(cfg.t**p for p in powers)
        if not grid:
            raise ConfigError("scheme.grid", "must be a nonempty list")
        cfg.grid = grid
    _validate_kind(cfg, cp)
    return cfg


def _validate_kind(cfg: RunConfig, cp) -> None:
    k = cfg.kind
    if k in ("sweep", "clt"):
        if cfg.model is None:
            raise ConfigError("model", f"section is required for {k}")
        if not cfg.grid:
            raise ConfigError("scheme", f"section with a grid is required for {k}")
        if cfg.t < 1:
            raise ConfigError("experiment.t", "must be a positive integer")
    if k == "sweep":
        sec = cp["sweep"] if "sweep" in cp else {}
        ests = _get(sec, "sweep", "estimators", _kinds, default=MU_KINDS)
        if EstimatorKind.SIGMA in ests:
            raise ConfigError("sweep.estimators", "Sigma is not a drift estimator")
    if k == "clt":
        if cfg.reps < 100:
            raise ConfigError("experiment.reps", f"clt needs reps >= 100, got {cfg.reps}")
        if len(cfg.grid) != 1:
            raise ConfigError("scheme.grid", "clt runs on exactly one grid point")
        sec = cp["clt"] if "clt" in cp else {}
        est = _get(sec, "clt", "estimator", str, default="Hat")
        if est not in [e.value for e in EstimatorKind]:
            raise ConfigError("clt.estimator", f"unknown estimator {est!r}")
        if est == "Sigma" and "gamma" not in sec and "gamma_power" not in sec:
            raise ConfigError("clt.gamma", "sigma runs need gamma or gamma_power")
    if k == "verify":
        sec = cp["verify"] if "verify" in cp else {}
        if cfg.model is None and "interarrival_delta" not in sec:
            raise ConfigError("model", "section is required for verify unless verify.interarrival_delta is set")
        checks = tuple(c.strip() for c in sec.get("checks", "wald,lorden").split(",") if c.strip())
        for c in checks:
            if c not in CHECKS:
                raise ConfigError("verify.checks", f"unknown check {c!r}; choose from {CHECKS}")
        if any(c in ("lr", "anscombe") for c in checks) and not _get(sec, "verify", "grid", _pairs):
            raise ConfigError("verify.grid", "lr/anscombe checks need delta:t pairs")
        if any(c in ("wald", "lorden") for c in checks) and not _get(sec, "verify", "levels", _floats):
            raise ConfigError("verify.levels", "wald/lorden checks need levels")
        ia = _get(sec, "verify", "interarrival", str)
        if ia is not None and ia not in ("exponential", "geometric", "deterministic"):
            raise ConfigError("verify.interarrival", f"unknown interarrival law {ia!r}")
        if "interarrival_delta" in sec:
            if ia is None:
                raise ConfigError("verify.interarrival_delta", "needs verify.interarrival")
            if not _get(sec, "verify", "interarrival_delta", float) >= 1:
                raise ConfigError("verify.interarrival_delta", "must be >= 1")
        if "rho" in checks and cfg.model is None:
            raise ConfigError("model", "the rho check needs a model")
        if cfg.model is None and any(c in ("lr", "anscombe") for c in checks) and ia is None:
            raise ConfigError("verify.interarrival", "lr/anscombe need a model or an interarrival law")
    if k == "fusion":
        names = [n for n in cp.sections() if n.startswith("sensor.")]
        if not names:
            raise ConfigError("sensor", "fusion needs at least one [sensor.<id>] section")
        sec = cp["fusion"] if "fusion" in cp else {}
        mode = _get(sec, "fusion", "mode", str, default="run")
        if mode not in ("run", "clt"):
            raise ConfigError("fusion.mode", "must be run or clt")
        if mode == "clt" and cfg.reps < 100:
            raise ConfigError("experiment.reps", f"clt needs reps >= 100, got {cfg.reps}")
        if cfg.t < 1:
            raise ConfigError("experiment.t", "must be a positive integer")
        for n in names:
            s = cp[n]
            model = _sensor_model(s, n)
            delta = _get(s, n, "delta", float)
            power = _get(s, n, "delta_power", float)
            if (delta is None) == (power is None):
                raise ConfigError(f"{n}.delta", "give exactly one of delta or delta_power")
            if power is not None:
                delta = model.mean * cfg.t**power
            if not delta > 0 or not math.isfinite(delta):
                raise ConfigError(f"{n}.delta", "must be positive")
            gamma = _get(s, n, "gamma", float)
            if gamma is not None and not gamma > 0:
                raise ConfigError(f"{n}.gamma", "must be positive")
            cfg.sensors.append(SensorConfig(n.split(".", 1)[1], model, delta, gamma))
