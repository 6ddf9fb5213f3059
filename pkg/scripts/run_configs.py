"""Run every shipped config through the CLI and report exit codes.

    python3 scripts/run_configs.py [--out DIR] [--only NAME ...]
"""
import argparse
import configparser
import pathlib
import sys
import time

from lowrate.cli import run as cli_run

ROOT = pathlib.Path(__file__).resolve().parents[1]


def kind_of(path: pathlib.Path) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path)
    return cp["experiment"]["kind"].strip()


def run() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=str(ROOT / "out"))
    ap.add_argument("--only", nargs="*", help="config stems to run, e.g. wald fig1")
    args = ap.parse_args()
    paths = sorted((ROOT / "configs").glob("*.cfg"))
    if args.only:
        paths = [p for p in paths if p.stem in args.only]
    failed = 0
    for p in paths:
        start = time.perf_counter()
        code = cli_run([kind_of(p), "--config", str(p), "--out", args.out])
        failed += code != 0
        print(f"{p.stem:22s} exit {code}  {time.perf_counter() - start:7.1f}s", flush=True)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(run())
