"""Command-line entry point: ``photopair simulate|analyze|predict|report``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error. Errors
are written to stderr as a single JSON line.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, analysis
from .config import ConfigError, build_config, config_hash, load_config
from .events import EventRecord, RecordParseError, RecordValidationError, read_record, write_record
from .larmor import Polarization, fit_decoherence_time, predict_g12
from .sim import simulate

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str | None
    seed: int | None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    tool_version: str = __version__
    wall_clock_s: float = 0.0
    argv: list[str] = field(default_factory=list)

    def write(self, path: Path) -> None:
        _write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def fmt(x: float) -> str:
    return f"{float(x):.6g}"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot write {path}: {exc.strerror or exc}", path=str(path)) from None


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def _read_csv(path: Path, required: list[str]) -> list[dict[str, float]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise CliError(EXIT_USAGE, "format", f"{path}: missing columns {missing}", path=str(path))
            rows = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append({c: float(row[c]) for c in required})
                except (TypeError, ValueError):
                    raise CliError(EXIT_USAGE, "format", f"{path}: bad number on line {lineno}",
                                   path=str(path), line=lineno) from None
            return rows
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot read {path}: {exc.strerror or exc}", path=str(path)) from None


def _load_config(path: str, overrides: list[str], seed: int | None):
    try:
        cfg = load_config(path, overrides)
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, "config", str(exc), key=exc.key, line=exc.line) from None
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot read config {path}: {exc.strerror or exc}", path=path) from None
    if seed is not None:
        if seed < 0:
            raise CliError(EXIT_USAGE, "config", "sim.seed: must be >= 0", key="sim.seed")
        cfg = replace(cfg, seed=seed)
    return cfg


class _Reporter:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def info(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def warn(self, msg: str) -> None:
        if not self.quiet:
            print(json.dumps({"warning": msg}), file=sys.stderr)


# simulate

def cmd_simulate(args, rep: _Reporter) -> int:
    cfg = _load_config(args.config, args.set, args.seed)
    record = simulate(cfg, workers=args.workers)
    out = Path(args.out)
    try:
        write_record(record, out)
    except OSError as exc:
        raise CliError(EXIT_IO, "io", str(exc), path=str(out)) from None
    manifest = RunManifest("simulate", config_hash(cfg), cfg.seed, [args.config], [str(out)])
    manifest.argv = list(args.argv)
    args.manifest = (manifest, Path(str(out) + ".manifest.json"))
    rep.info(f"wrote {len(record)} events over {cfg.schedule.trial_count} trials to {out}")
    return EXIT_OK


# analyze

def _hist_rows(h: analysis.CoincidenceHistogram, diagonal_only: bool = False):
    t1, t2 = h.t1_ns, h.t2_ns
    p, s = h.probability, h.sigma
    if diagonal_only:
        return [(t1[i], t2[i], p[i, i], s[i, i]) for i in range(len(t1))]
    return [(t1[i], t2[j], p[i, j], s[i, j]) for i in range(len(t1)) for j in range(len(t2))]


def _record_config_hash(record: EventRecord) -> str | None:
    flat = {k[len("config."):]: v for k, v in record.metadata.items() if k.startswith("config.")}
    if not flat:
        return None
    try:
        return config_hash(build_config(flat))
    except ConfigError:
        return None


def cmd_analyze(args, rep: _Reporter) -> int:
    path = Path(args.events)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            record = read_record(path)
    except (RecordParseError, RecordValidationError) as exc:
        raise CliError(EXIT_USAGE, "record", str(exc), path=str(path),
                       line=getattr(exc, "line", None) or None) from None
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot read {path}: {exc.strerror or exc}", path=str(path)) from None
    for w in caught:
        rep.warn(str(w.message))
    if not args.tau > 0:
        raise CliError(EXIT_USAGE, "usage", "--tau must be > 0")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        binning = analysis.default_binning(record, args.tau)
    for w in caught:
        rep.warn(str(w.message))

    empty = len(record) == 0
    if empty:
        rep.warn("record contains no events; all products are zero")
    prefix = args.prefix
    outputs = []

    def emit(suffix, header, rows):
        p = Path(f"{prefix}_{suffix}.csv")
        _write_csv(p, header, rows)
        outputs.append(str(p))

    cross = analysis.cross_histogram(record, binning)
    emit("cross", ["t1_ns", "t2_ns", "probability", "sigma"], _hist_rows(cross))
    auto1 = analysis.auto_histogram(record, binning, 1)
    auto2 = analysis.auto_histogram(record, binning, 2)
    if args.autos:
        emit("auto1", ["t1_ns", "t2_ns", "probability", "sigma"], _hist_rows(auto1, True))
        emit("auto2", ["t1_ns", "t2_ns", "probability", "sigma"], _hist_rows(auto2, True))
    if args.accidentals:
        try:
            acc = analysis.accidental_histogram(record, binning)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, "analysis", str(exc)) from None
        emit("accidental", ["t1_ns", "t2_ns", "probability", "sigma"], _hist_rows(acc))
    surface = analysis.ratio_surface(cross, auto1, auto2)
    if args.surface:
        rows = []
        for i, a in enumerate(surface.t1_ns):
            for j, b in enumerate(surface.t2_ns):
                ok = bool(surface.mask[i, j])
                rows.append((a, b, surface.R[i, j] if ok else 0.0, surface.sigma_R[i, j] if ok else 0.0,
                             "1" if ok else "0"))
        emit("R", ["t1_ns", "t2_ns", "R", "sigma_R", "defined"], rows)
    if args.g12:
        if empty:
            g, s = 0.0, 0.0
        else:
            try:
                g, s = analysis.g12_integrated(record)
            except ValueError as exc:
                raise CliError(EXIT_USAGE, "analysis", str(exc)) from None
        emit("g12", ["delta_t_ns", "g12", "sigma"], [(record.schedule.delta_t_ns, g, s)])
    if args.ridge:
        prof = analysis.ridge_profile(cross)
        emit("ridge", ["dt_ns", "probability", "sigma"], prof.rows())

    r, sr, t1, t2 = surface.max()
    if math.isnan(r):
        rep.info(f"max R: undefined (no bin with nonzero cross and auto counts), tau={fmt(args.tau)} ns")
    else:
        rep.info(f"max R = {fmt(r)} +/- {fmt(sr)} at (t1, t2) = ({fmt(t1)}, {fmt(t2)}) ns, tau={fmt(args.tau)} ns")
    seed = record.metadata.get("config.sim.seed")
    manifest = RunManifest("analyze", _record_config_hash(record), int(seed) if seed is not None else None,
                           [str(path)], outputs)
    manifest.argv = list(args.argv)
    args.manifest = (manifest, Path(f"{prefix}_manifest.json"))
    return EXIT_OK


# predict

def parse_dt_spec(spec: str) -> list[float]:
    """``start:stop:step`` with an inclusive stop, in ns."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise CliError(EXIT_USAGE, "usage", f"delta-t spec must be start:stop:step, got {spec!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise CliError(EXIT_USAGE, "usage", f"delta-t spec must be plain numbers, got {spec!r}") from None
    if not all(math.isfinite(v) for v in (start, stop, step)):
        raise CliError(EXIT_USAGE, "usage", "delta-t spec must be finite")
    if step <= 0:
        raise CliError(EXIT_USAGE, "usage", "step must be > 0")
    if start < 0 or stop < start:
        raise CliError(EXIT_USAGE, "usage", "need 0 <= start <= stop")
    n = int(math.floor((stop - start) / step + 1e-9))
    return [start + k * step for k in range(n + 1)]


def cmd_predict(args, rep: _Reporter) -> int:
    dts = parse_dt_spec(args.dt)
    cfg = _load_config(args.config, args.set, args.seed)
    model = cfg.coherence
    if args.polarized:
        model = model.with_polarization(Polarization.CLOCK)
    try:
        curve = predict_g12(model, cfg.kinetics, cfg.schedule, dts, args.scale)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    out = Path(args.out)
    _write_csv(out, ["delta_t_ns", "g12_pred"], curve)
    manifest = RunManifest("predict", config_hash(cfg), cfg.seed, [args.config], [str(out)])
    manifest.argv = list(args.argv)
    args.manifest = (manifest, Path(str(out) + ".manifest.json"))
    rep.info(f"wrote {len(curve)} model points to {out}")
    return EXIT_OK


# report

def fit_scale(model_excess: np.ndarray, measured_excess: np.ndarray) -> tuple[float, float]:
    """Least-squares ``s`` minimizing sum (y - s m)^2; returns (s, RMS residual)."""
    denom = float(np.dot(model_excess, model_excess))
    if denom == 0.0:
        raise CliError(EXIT_USAGE, "fit", "degenerate fit: model excess is zero at every measured point")
    s = float(np.dot(model_excess, measured_excess)) / denom
    resid = measured_excess - s * model_excess
    return s, float(math.sqrt(np.mean(resid ** 2)))


def _half_life(points, baseline=1.0):
    try:
        h = fit_decoherence_time(points, baseline)
    except ValueError as exc:
        return {"tau_ns": None, "note": str(exc)}
    if h.determined:
        return {"tau_ns": h.tau_ns, "peak_at_ns": h.peak_at_ns}
    return {"tau_ns": None, "note": f"not determined within {h.range_end_ns} ns", "peak_at_ns": h.peak_at_ns}


def cmd_report(args, rep: _Reporter) -> int:
    sweep = Path(args.sweep_dir)
    if not sweep.is_dir():
        raise CliError(EXIT_IO, "io", f"sweep directory {sweep} not found", path=str(sweep))
    files = sorted(sweep.glob("*_g12.csv"))
    measured = []
    for f in files:
        measured += [(r["delta_t_ns"], r["g12"], r["sigma"]) for r in _read_csv(f, ["delta_t_ns", "g12", "sigma"])]
    measured.sort()
    if len(measured) < 3:
        raise CliError(EXIT_USAGE, "usage", f"insufficient points: {len(measured)} measured g12 values, need >= 3")
    model = sorted((r["delta_t_ns"], r["g12_pred"]) for r in _read_csv(Path(args.model_csv), ["delta_t_ns", "g12_pred"]))
    if len(model) < 2:
        raise CliError(EXIT_USAGE, "usage", "insufficient points in model curve")
    mx = np.array([m[0] for m in model])
    my = np.array([m[1] for m in model]) - 1.0
    dt = np.array([m[0] for m in measured])
    if dt.min() < mx.min() - 1e-9 or dt.max() > mx.max() + 1e-9:
        raise CliError(EXIT_USAGE, "usage", "measured delta_t outside the model curve range")
    m_at = np.interp(dt, mx, my)
    y = np.array([m[1] for m in measured]) - 1.0
    scale, residual = fit_scale(m_at, y)
    report = {
        "scale": scale,
        "residual": residual,
        "points": len(measured),
        "tau_d_measured": _half_life([(m[0], m[1]) for m in measured])["tau_ns"],
        "tau_d_model": _half_life(model)["tau_ns"],
        "tau_d_measured_detail": _half_life([(m[0], m[1]) for m in measured]),
        "tau_d_model_detail": _half_life(model),
    }
    out = Path(args.out)
    _write_text(out, json.dumps(report, indent=2) + "\n")
    manifest = RunManifest("report", None, None, [str(f) for f in files] + [args.model_csv], [str(out)])
    manifest.argv = list(args.argv)
    args.manifest = (manifest, Path(str(out) + ".manifest.json"))
    rep.info(f"scale={fmt(scale)} residual={fmt(residual)} tau_d measured={report['tau_d_measured']} "
             f"model={report['tau_d_model']}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def build_parser() -> argparse.ArgumentParser:
    def common_flags(suppress: bool):
        # subcommand copies must not reset values given before the subcommand
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        c = argparse.ArgumentParser(add_help=False)
        c.add_argument("--seed", type=int, default=d(None), help="override sim.seed")
        c.add_argument("--workers", type=int, default=d(1), help="worker processes (never changes output)")
        c.add_argument("--quiet", action="store_true", default=d(False),
                       help="suppress informational output and warnings")
        return c

    ap = _Parser(prog="photopair", description=__doc__.splitlines()[0], parents=[common_flags(False)])
    common = common_flags(True)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="generate an event record")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="coincidence histograms and R surface")
    p.add_argument("events")
    p.add_argument("--tau", type=float, default=4.0, help="bin size in ns")
    p.add_argument("--prefix", required=True)
    for flag in ("surface", "autos", "accidentals", "g12", "ridge"):
        p.add_argument(f"--{flag}", action="store_true")
    p.add_argument("--all", action="store_true", help="all products")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", parents=[common], help="model g12 curve")
    p.add_argument("config")
    p.add_argument("--dt", default="0:400:10", help="start:stop:step in ns, stop inclusive")
    p.add_argument("--polarized", action="store_true", help="clock-state (m=0) polarized scheme")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", parents=[common], help="fit model scale to a simulated sweep")
    p.add_argument("sweep_dir")
    p.add_argument("model_csv")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        if args.workers < 1:
            raise CliError(EXIT_USAGE, "usage", "--workers must be >= 1")
        if getattr(args, "all", False):
            args.surface = args.autos = args.accidentals = args.g12 = args.ridge = True
        code = args.func(args, _Reporter(args.quiet))
        manifest, path = args.manifest
        manifest.wall_clock_s = round(time.perf_counter() - t0, 6)
        manifest.write(path)
        return code
    except CliError as exc:
        payload = {"error": exc.kind, "message": str(exc), "exit_code": exc.code}
        payload.update({k: v for k, v in exc.extra.items() if v is not None})
        print(json.dumps(payload), file=sys.stderr)
        return exc.code

