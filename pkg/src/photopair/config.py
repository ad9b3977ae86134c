"""Flat ``section.key = value`` configuration files.

Grammar: one assignment per line, ``#`` starts a comment line, blank lines
are ignored. Values are plain numbers (no unit suffixes; times in ns,
frequencies in Hz) or the documented keywords. Keys not listed in
:data:`DEFAULTS` are rejected.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path
from typing import Iterable, Mapping

from .events import TrialSchedule
from .kinetics import PairKinetics
from .larmor import CoherenceModel, FieldInhomogeneity, Polarization, ZeemanScheme
from .sim import SimConfig, SourceRates

DEFAULTS: dict[str, str] = SimConfig().to_flat()

_INT_KEYS = {"schedule.trials", "sim.seed", "coherence.f_a", "coherence.f_b"}
_TEXT_KEYS = {"coherence.polarization", "coherence.weights"}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = f"{key}: " if key else ""
        at = f" (line {line})" if line else ""
        super().__init__(f"{where}{message}{at}")


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'section.key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError("unknown key", key, lineno)
        if key in out:
            raise ConfigError("duplicate key", key, lineno)
        out[key] = value
    return out


def apply_overrides(flat: Mapping[str, str], overrides: Iterable[str]) -> dict[str, str]:
    out = dict(flat)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError("unknown key", key)
        out[key] = value
    return out


def _number(flat, key):
    raw = flat[key]
    try:
        value = int(raw) if key in _INT_KEYS else float(raw)
    except ValueError:
        raise ConfigError(f"not a plain number: {raw!r}", key) from None
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"must be finite: {raw!r}", key)
    return value


def _weights(raw: str, key: str) -> dict[tuple[int, int], float]:
    if raw == "uniform":
        return {}
    weights = {}
    try:
        for item in raw.split(","):
            ma, mb, w = item.split(":")
            weights[(int(ma), int(mb))] = float(w)
    except ValueError:
        raise ConfigError(f"weights must be 'uniform' or 'm_a:m_b:w,...', got {raw!r}", key) from None
    return weights


def build_config(flat: Mapping[str, str]) -> SimConfig:
    """Turn a (partial) flat mapping into a validated :class:`SimConfig`."""
    full = dict(DEFAULTS)
    full.update(flat)
    n = {k: _number(full, k) for k in full if k not in _TEXT_KEYS}

    def section(label, fn):
        try:
            return fn()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), label) from None

    schedule = section("schedule", lambda: TrialSchedule(
        n["schedule.delta_t_ns"], n["schedule.write_duration_ns"], n["schedule.read_duration_ns"],
        n["schedule.window_ns"], n["schedule.trials"]))
    kinetics = section("kinetics", lambda: PairKinetics(
        n["kinetics.delta0_ns"], n["kinetics.retrieval_delay_ns"], n["kinetics.retrieval_fwhm_ns"]))
    rates = section("rates", lambda: SourceRates(
        n["rates.p_pair"], n["rates.p1_uncorr"], n["rates.p2_uncorr"], n["rates.dark_per_window"],
        n["rates.eta1"], n["rates.eta2"]))
    try:
        polarization = Polarization(full["coherence.polarization"])
    except ValueError:
        raise ConfigError("must be 'unpolarized' or 'clock'", "coherence.polarization") from None
    residual = n["coherence.residual_decay_ns"]
    coherence = section("coherence", lambda: CoherenceModel(
        ZeemanScheme(n["coherence.f_a"], n["coherence.f_b"], n["coherence.g_a"], n["coherence.g_b"],
                     n["coherence.g_ref"], _weights(full["coherence.weights"], "coherence.weights"),
                     polarization),
        FieldInhomogeneity(n["coherence.k_hz"]),
        residual if residual > 0 else None))
    if n["sim.seed"] < 0:
        raise ConfigError("must be >= 0", "sim.seed")
    return SimConfig(schedule, kinetics, rates, coherence, n["sim.seed"])


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> SimConfig:
    text = Path(path).read_text(encoding="utf-8")
    return build_config(apply_overrides(parse_config_text(text), overrides))


def dump_config(config: SimConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.to_flat().items())


def config_hash(config: SimConfig) -> str:
    canonical = "".join(f"{k}={v}\n" for k, v in sorted(config.to_flat().items()))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
