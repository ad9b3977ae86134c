#!/usr/bin/env python3
"""Simulate a storage-time sweep and compare it with the model curve.

Runs ``photopair simulate`` and ``photopair analyze --g12`` for every
delta_t, ``photopair predict`` for the model, and ``photopair report`` for
the single-scale fit. Everything lands in --out.

    python scripts/sweep.py --out runs/sweep [--trials 1000000] [--dt 0:400:25]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from photopair.cli import main as cli, parse_dt_spec

ROOT = Path(__file__).resolve().parents[1]


def run(argv):
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def sweep(out: Path, config: Path, trials: int, dt_spec: str, workers: int = 1, quiet: bool = True):
    out.mkdir(parents=True, exist_ok=True)
    flags = ["--quiet"] if quiet else []
    g12_dir = out / "g12"
    for dt in parse_dt_spec(dt_spec):
        tag = f"dt{dt:06.1f}"
        events = out / "records" / f"{tag}.txt"
        events.parent.mkdir(parents=True, exist_ok=True)
        run(flags + ["--workers", str(workers), "simulate", str(config), "-o", str(events),
                     "--set", f"schedule.delta_t_ns={dt}", "--set", f"schedule.trials={trials}"])
        run(flags + ["analyze", str(events), "--tau", "200", "--g12", "--prefix", str(g12_dir / tag)])
    model = out / "model.csv"
    run(flags + ["predict", str(config), "--dt", "0:400:5", "-o", str(model)])
    report = out / "report.json"
    run(flags + ["report", str(g12_dir), str(model), "-o", str(report)])
    return json.loads(report.read_text())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "sweep")
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "calibrated.cfg")
    ap.add_argument("--trials", type=int, default=1_000_000)
    ap.add_argument("--dt", default="0:400:25")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    print(json.dumps(sweep(args.out, args.config, args.trials, args.dt, args.workers), indent=2))


if __name__ == "__main__":
    main()
