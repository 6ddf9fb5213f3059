"""Command-line entry point: ``lowrate {sweep,clt,verify,fusion,selftest}``.

Exit codes: 0 success, 1 a check failed, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, theory
from .config import ConfigError, RunConfig, _floats, _pairs, parse_config
from .engine import (
    DeterministicInterarrival,
    Exponential,
    Geometric,
    HittingOneSided,
    HittingTwoSided,
    simulate_trace,
    write_trace_csv,
)
from .estimators import MU_KINDS, EstimatorKind
from .rng import RngStream

OUT_ENV = "LOWRATE_OUT"
_INTERARRIVALS = {"exponential": Exponential, "geometric": Geometric, "deterministic": DeterministicInterarrival}


def _out_dir(args, cfg: RunConfig) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sec(cfg, name) -> dict:
    return cfg.sections.get(name, {})


def _spec(cfg: RunConfig, kinds=MU_KINDS, gamma=None) -> harness.ExperimentSpec:
    try:
        return harness.ExperimentSpec(cfg.experiment_id, cfg.model, cfg.grid, cfg.t, cfg.reps, cfg.seed,
                                      cfg.scheme, kinds, gamma)
    except ValueError as exc:  # includes UnsupportedModelError
        raise ConfigError("scheme", str(exc)) from None


def _gamma(cfg) -> float | None:
    sec = _sec(cfg, "clt")
    if "gamma" in sec:
        return float(sec["gamma"])
    if "gamma_power" in sec:
        return cfg.model.mean * cfg.t ** float(sec["gamma_power"])
    return None


def _dump_traces(cfg: RunConfig, spec: harness.ExperimentSpec, n: int, out: Path) -> None:
    """Event traces of the first ``n`` replications, one file per grid point."""
    if not spec.hitting:
        return
    cls = HittingTwoSided if spec.scheme == "hitting2" else HittingOneSided
    for gi, thr in enumerate(spec.thresholds):
        traces = ((r, simulate_trace(spec.model, cls(float(thr)), spec.t, spec.rep_stream(r)))
                  for r in range(min(n, spec.reps)))
        write_trace_csv(out / f"{cfg.experiment_id}_traces_{gi}.csv", traces)


def _plan(cfg: RunConfig) -> str:
    lines = [f"experiment {cfg.experiment_id} ({cfg.kind}), seed {cfg.seed}, reps {cfg.reps}"]
    if cfg.kind in ("sweep", "clt"):
        lines.append(f"model {cfg.model}, scheme {cfg.scheme}, t {cfg.t}")
        lines.append(f"grid size {len(cfg.grid)}: {', '.join(f'{d:g}' for d in cfg.grid)}")
        lines.append(f"total simulated increments {cfg.reps * cfg.t}")
    elif cfg.kind == "fusion":
        lines.append(f"{len(cfg.sensors)} sensors, t {cfg.t}")
        lines.append(f"total simulated increments {cfg.reps * cfg.t * len(cfg.sensors)}")
    else:
        v = _sec(cfg, "verify")
        lines.append(f"model {cfg.model}, checks {v.get('checks', 'wald,lorden')}")
        if "grid" in v:
            lines.append(f"grid size {len(_pairs(v['grid']))}")
        if "levels" in v:
            lines.append(f"levels {v['levels']}")
    return "\n".join(lines)


# --------------------------------------------------------------------------- commands


def cmd_sweep(cfg, args, out) -> int:
    sec = _sec(cfg, "sweep")
    kinds = tuple(EstimatorKind(k.strip()) for k in sec.get("estimators", ",".join(k.value for k in MU_KINDS)).split(","))
    spec = _spec(cfg, kinds)
    table = harness.re_sweep(spec, workers=args.threads)
    table.to_csv(out / f"{cfg.experiment_id}.csv")
    if args.dump_traces:
        _dump_traces(cfg, spec, args.dump_traces, out)
    if sec.get("ordering", "false").lower() in ("1", "true", "yes", "on"):
        claims = harness.ordering_report(table)
        text = harness.format_claims(claims)
        (out / f"{cfg.experiment_id}_ordering.txt").write_text(text + "\n")
        print(text)
        return 0 if all(c.passed for c in claims) else 1
    print(f"wrote {len(table.rows)} rows to {out / (cfg.experiment_id + '.csv')}")
    return 0


def _limit_line(name, value, limit, below=True) -> tuple[str, bool]:
    ok = value < limit if below else value > limit
    return f"{'PASS' if ok else 'FAIL'}  {name} = {value:.5g} (limit {'<' if below else '>'} {limit:g})", ok


def cmd_clt(cfg, args, out) -> int:
    sec = _sec(cfg, "clt")
    est = sec.get("estimator", "Hat")
    gamma = _gamma(cfg)
    lines, ok = [], True
    if est == "Sigma":
        spec = _spec(cfg, (EstimatorKind.HAT,), gamma)
        res = harness.sigma_consistency(spec, workers=args.threads)
        values = res.values
        lines.append(f"median sigma-hat {res.median:.6g} vs sigma {cfg.model.sd:.6g}; clamped {res.clamped}; "
                     f"excluded {res.excluded}")
        if "max_rel_error" in sec:
            line, good = _limit_line("median relative error", res.median_rel_error, float(sec["max_rel_error"]))
            lines.append(line)
            ok &= good
    else:
        kind = EstimatorKind(est)
        plug = sec.get("plug_sigma", "false").lower() in ("1", "true", "yes", "on")
        spec = _spec(cfg, (kind,), gamma)
        res = harness.clt_diagnostic(spec, kind, plug_sigma=plug, workers=args.threads)
        values = res.values
        lines.append(f"{kind.value}: n {res.n}, excluded {res.excluded}, mean {res.mean:.5g}, "
                     f"variance {res.variance:.5g}, ks {res.ks_stat:.5g}")
        if "max_ks" in sec:
            line, good = _limit_line("KS distance", res.ks_stat, float(sec["max_ks"]))
            lines.append(line)
            ok &= good
        if "max_abs_mean" in sec:
            line, good = _limit_line("|mean of standardized values|", abs(res.mean), float(sec["max_abs_mean"]))
            lines.append(line)
            ok &= good
    np.savetxt(out / f"{cfg.experiment_id}_values.csv", values, fmt="%.17g", header="value", comments="")
    if args.dump_traces:
        _dump_traces(cfg, spec, args.dump_traces, out)
    text = "\n".join(lines)
    (out / f"{cfg.experiment_id}_summary.txt").write_text(text + "\n")
    print(text)
    return 0 if ok else 1


def cmd_verify(cfg, args, out) -> int:
    sec = _sec(cfg, "verify")
    checks = [c.strip() for c in sec.get("checks", "wald,lorden").split(",") if c.strip()]
    stream = RngStream(cfg.seed, purpose=f"verify:{cfg.experiment_id}")
    levels = _floats(sec["levels"]) if "levels" in sec else ()
    grid = _pairs(sec["grid"]) if "grid" in sec else ()
    r = float(sec.get("r", 1))
    ia = sec.get("interarrival")
    source = _INTERARRIVALS[ia] if ia else cfg.model
    # wald/lorden walk: the model, or the interarrival law itself as a positive walk
    walk = _INTERARRIVALS[ia](float(sec["interarrival_delta"])) if "interarrival_delta" in sec else cfg.model
    reports, lines, ok = [], [], True
    try:
        for i, check in enumerate(checks):
            sub = stream.child(i)
            if check == "wald":
                reports.append(theory.wald_residuals(walk, levels, cfg.reps, sub))
            elif check == "lorden":
                reports.append(theory.lorden_bounds(walk, levels, cfg.reps, sub))
            elif check == "lr":
                rep = theory.lr_error_table(source, r, grid, cfg.reps, sub)
                reports.append(rep)
                if "max_slope" in sec:
                    for s in rep.slopes:
                        if s.axis == "t" and s.check == "lr_N":
                            line, good = _limit_line(f"lr_N t-slope at delta={s.fixed:.4g} (se {s.se:.2g})",
                                                     s.slope, float(sec["max_slope"]) + 1e-12)
                            lines.append(line)
                            ok &= good
            elif check == "anscombe":
                reports.append(theory.anscombe_ratio(source, grid, cfg.reps, sub))
            elif check == "rho":
                rc = theory.rho_cross_check(cfg.model, int(float(sec.get("ladder_reps", 200000))),
                                            int(float(sec.get("direct_reps", cfg.reps))), sub,
                                            float(sec.get("level", 1e4)))
                lines.append(f"{'PASS' if rc.passed else 'FAIL'}  rho closed {rc.closed_form:.6g}, "
                             f"ladder {rc.ladder:.6g} (se {rc.ladder_se:.2g}), direct {rc.direct:.6g} "
                             f"(se {rc.direct_se:.2g}), max gap {rc.max_z:.2f} SE")
                ok &= rc.passed
    except ValueError as exc:
        raise ConfigError("verify", str(exc)) from None
    for rep in reports:
        for row in rep.rows:
            if row.passed is not None:
                bound = "" if row.bound_rhs is None else f" bound {row.bound_rhs:.5g}"
                lines.append(f"{'PASS' if row.passed else 'FAIL'}  {row.check} delta={row.delta:.5g} "
                             f"t={row.t:.6g}: {row.statistic:.5g} (se {row.se:.2g}){bound}")
        ok &= rep.passed
    if reports:
        theory.write_reports(out / f"{cfg.experiment_id}_verify.csv", reports)
    text = "\n".join(lines)
    (out / f"{cfg.experiment_id}_verify.txt").write_text(text + "\n")
    print(text)
    return 0 if ok else 1


def cmd_fusion(cfg, args, out) -> int:
    from . import fusion

    sec = _sec(cfg, "fusion")
    sensors = [fusion.SensorSpec(s.sensor_id, s.model, s.delta, s.gamma) for s in cfg.sensors]
    try:
        if sec.get("mode", "run") == "clt":
            res = fusion.network_clt_sample(sensors, cfg.t, cfg.reps, cfg.seed)
            np.savetxt(out / f"{cfg.experiment_id}_values.csv", res.values, fmt="%.17g", header="value", comments="")
            lines = [
                f"fused {res.kind.value}: n {res.values.size}, excluded {res.exclusions}, "
                f"ks {res.ks:.5g}, variance {np.var(res.values, ddof=1):.5g}",
                f"stated-scale variance {np.var(res.paper_scale_values, ddof=1):.5g} "
                f"(scale {res.paper_scale:.5g} vs {res.scale:.5g})",
            ]
            ok = res.sufficiency_mismatches == 0
            lines.append(f"{'PASS' if ok else 'FAIL'}  message-log sufficiency mismatches = {res.sufficiency_mismatches}")
            if "max_ks" in sec:
                line, good = _limit_line("KS distance", res.ks, float(sec["max_ks"]))
                lines.append(line)
                ok &= good
        else:
            cps = [int(float(c)) for c in sec.get("checkpoints", str(cfg.t)).replace(",", " ").split()]
            two = sec.get("two_sided", "false").lower() in ("1", "true", "yes", "on")
            runs = ((r, fusion.run_network(sensors, cps, cfg.seed, two_sided=two, rep=r)) for r in range(cfg.reps))
            fusion.write_network_csv(out / f"{cfg.experiment_id}_network.csv", runs)
            lines, ok = [f"wrote {cfg.reps} network runs"], True
    except ValueError as exc:
        raise ConfigError("fusion", str(exc)) from None
    text = "\n".join(lines)
    (out / f"{cfg.experiment_id}_summary.txt").write_text(text + "\n")
    print(text)
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    """Fast exactness checks that need no config."""
    from .distributions import Deterministic
    from .estimators import estimate
    from scipy import stats

    results = []
    tr = simulate_trace(Deterministic(4.0), HittingOneSided(8.0), 7, RngStream(0))
    vals = {k: estimate(tr, k).value for k in ("Bar", "Tilde", "Hat", "Check")}
    results.append(("deterministic Hat = Bar = 4", vals["Hat"] == 4 and vals["Bar"] == 4))
    results.append(("deterministic Check = Tilde = 24/7", math.isclose(vals["Check"], 24 / 7)
                    and math.isclose(vals["Tilde"], 24 / 7)))
    results.append(("deterministic overshoots are zero", bool(np.all(tr.eta == 0))))
    q = stats.norm.ppf((np.arange(1, 101) - 0.5) / 100)
    results.append(("KS of stratified normal quantiles = 1/(2n)", math.isclose(harness.ks_distance(q), 0.005)))
    results.append(("KS of a point mass at 0 = 1/2", math.isclose(harness.ks_distance(np.zeros(10)), 0.5)))
    for name, good in results:
        print(f"{'PASS' if good else 'FAIL'}  {name}")
    return 0 if all(g for _, g in results) else 1


COMMANDS = {"sweep": cmd_sweep, "clt": cmd_clt, "verify": cmd_verify, "fusion": cmd_fusion}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lowrate", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run a {name} experiment from a config file")
        sp.add_argument("--config", required=True, help="INI config file")
        sp.add_argument("--seed", type=int, help="override the config's master seed")
        sp.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads; results do not depend on it")
        sp.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
        sp.add_argument("--dump-traces", type=int, default=0, metavar="N",
                        help="also write event traces of the first N replications")
    sub.add_parser("selftest", help="run built-in exactness checks")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(args)
    try:
        cfg = parse_config(args.config, seed=args.seed)
        if cfg.kind != args.command:
            raise ConfigError("experiment.kind", f"config is for {cfg.kind!r}, not {args.command!r}")
        if args.dry_run:
            print(_plan(cfg))
            return 0
        return COMMANDS[args.command](cfg, args, _out_dir(args, cfg))
    except ConfigError as exc:
        print(f"config error {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
