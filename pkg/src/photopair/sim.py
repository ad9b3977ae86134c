"""Monte Carlo generator of detection records.

Per trial: at most one heralded pair (t1, t2) drawn from the pair density,
Poisson numbers of uncorrelated photons in each field, detector efficiency
thinning, a 50/50 split onto the two arms of each field and Poisson dark
counts on every channel. All randomness comes from :mod:`photopair.rng`, so
trial ``j`` depends only on ``(seed, j)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng as crng
from .events import EventRecord, TrialSchedule
from .kinetics import PairKinetics
from .larmor import CoherenceModel, FieldInhomogeneity, Polarization, ZeemanScheme, coherence

__all__ = ["SourceRates", "SimConfig", "PairKinetics", "SamplingError", "simulate", "sample_pair", "draw_pairs"]

CHUNK_TRIALS = 1 << 18

# stream ids for crng.uniform
_PAIR, _T1, _KERNEL, _ACCEPT = 1, 2, 3, 4
_BG_N = {1: 5, 2: 6}
_BG_T = {1: 7, 2: 8}
_THIN = {"p1": 9, "p2": 10, 1: 11, 2: 12}
_ARM = {"p1": 13, "p2": 14, 1: 15, 2: 16}
_DARK_N = 20
_DARK_T = 30


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceRates:
    p_pair: float = 0.01
    p1_uncorr: float = 0.0
    p2_uncorr: float = 0.0
    dark_per_window: float = 0.0
    eta1: float = 0.3
    eta2: float = 0.3

    def __post_init__(self):
        for name in ("p_pair", "eta1", "eta2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("p1_uncorr", "p2_uncorr", "dark_per_window"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class SimConfig:
    schedule: TrialSchedule = field(default_factory=lambda: TrialSchedule(trial_count=100_000))
    kinetics: PairKinetics = field(default_factory=PairKinetics)
    rates: SourceRates = field(default_factory=SourceRates)
    coherence: CoherenceModel = field(default_factory=CoherenceModel)
    seed: int = 0

    def to_flat(self) -> dict[str, str]:
        """Flat ``section.key -> value`` view, the same keys the config file uses."""
        s, k, r, c = self.schedule, self.kinetics, self.rates, self.coherence
        sch = c.scheme
        flat = {
            "schedule.delta_t_ns": s.delta_t_ns,
            "schedule.write_duration_ns": s.write_duration_ns,
            "schedule.read_duration_ns": s.read_duration_ns,
            "schedule.window_ns": s.window_ns,
            "schedule.trials": int(s.trial_count),
            "kinetics.delta0_ns": k.delta0_ns,
            "kinetics.retrieval_delay_ns": k.retrieval_delay_ns,
            "kinetics.retrieval_fwhm_ns": k.retrieval_fwhm_ns,
            "rates.p_pair": r.p_pair,
            "rates.p1_uncorr": r.p1_uncorr,
            "rates.p2_uncorr": r.p2_uncorr,
            "rates.dark_per_window": r.dark_per_window,
            "rates.eta1": r.eta1,
            "rates.eta2": r.eta2,
            "coherence.k_hz": c.inhomogeneity.k_hz,
            "coherence.polarization": sch.polarization.value,
            "coherence.f_a": sch.f_a,
            "coherence.f_b": sch.f_b,
            "coherence.g_a": sch.g_a,
            "coherence.g_b": sch.g_b,
            "coherence.g_ref": sch.g_ref,
            "coherence.weights": _format_weights(sch),
            "coherence.residual_decay_ns": c.residual_decay_time_ns or 0.0,
            "sim.seed": int(self.seed),
        }
        return {key: (repr(float(v)) if isinstance(v, float) else str(v)) for key, v in flat.items()}

    def replace(self, **kw) -> "SimConfig":
        from dataclasses import replace
        return replace(self, **kw)


def _format_weights(scheme: ZeemanScheme) -> str:
    default = ZeemanScheme(scheme.f_a, scheme.f_b, scheme.g_a, scheme.g_b, scheme.g_ref, {},
                           scheme.polarization)
    if dict(default.population_weights) == dict(scheme.population_weights):
        return "uniform"
    return ",".join(f"{ma}:{mb}:{w!r}" for (ma, mb), w in sorted(scheme.population_weights.items()))


def draw_pairs(kinetics: PairKinetics, model: CoherenceModel, schedule: TrialSchedule,
               u_t1: np.ndarray, u_kernel: np.ndarray, u_accept: np.ndarray):
    """Map uniforms to heralded pairs.

    t1 is uniform over the write pulse and the retrieval delay follows the
    kernel, which samples ``I_w * g_ret`` exactly. The field-2 photon is kept
    with probability ``C(t2 - t1)`` and only if it falls inside the read
    pulse, so accepted pairs are distributed as :func:`pair_density`.
    Returns ``(t1, t2, accepted)`` on the common time axis.
    """
    t1 = np.asarray(u_t1) * schedule.write_duration_ns
    t2 = kinetics.retrieval_start(t1, schedule.delta_t_ns) + kinetics.kernel_ppf(u_kernel)
    in_read = (t2 >= schedule.delta_t_ns) & (t2 < schedule.read_end_ns)
    c = np.zeros_like(t1)
    if np.any(in_read):
        c[in_read] = coherence(model, t2[in_read] - t1[in_read])
    if np.any(c > 1.0):
        raise SamplingError("coherence exceeded 1; acceptance bound violated")
    accepted = in_read & (np.asarray(u_accept) < c)
    return t1, t2, accepted


def sample_pair(kinetics: PairKinetics, model: CoherenceModel, schedule: TrialSchedule,
                rng: np.random.Generator):
    """Draw one heralded pair; None when the field-2 photon is lost to dephasing."""
    u = rng.random(3)
    t1, t2, ok = draw_pairs(kinetics, model, schedule, u[:1], u[1:2], u[2:3])
    return (float(t1[0]), float(t2[0])) if ok[0] else None


def _poisson_icdf(u: np.ndarray, mean: float) -> np.ndarray:
    if mean <= 0:
        return np.zeros(u.shape, dtype=np.int64)
    kmax = int(mean + 20.0 * math.sqrt(mean) + 30)
    cdf = stats.poisson.cdf(np.arange(kmax + 1), mean)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def _expand(trials: np.ndarray, keys: np.ndarray, counts: np.ndarray):
    """Repeat trial ids/keys by per-trial counts and number photons within each trial."""
    total = int(counts.sum())
    t = np.repeat(trials, counts)
    kk = np.repeat(keys, counts)
    k = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    return t, kk, k


def _simulate_chunk(config: SimConfig, start: int, stop: int):
    s, r = config.schedule, config.rates
    trials = np.arange(start, stop, dtype=np.int64)
    keys = crng.trial_keys(config.seed, trials)
    window_ps = s.window_ps

    photons = []  # (trial, field, window-relative time ns, keys, thin stream, arm stream, index)

    if r.p_pair > 0:
        has = crng.uniform(keys, _PAIR) < r.p_pair
        pt, pk = trials[has], keys[has]
        t1, t2, acc = draw_pairs(config.kinetics, config.coherence, s,
                                 crng.uniform(pk, _T1), crng.uniform(pk, _KERNEL), crng.uniform(pk, _ACCEPT))
        zeros = np.zeros(pt.size, dtype=np.int64)
        photons.append((pt, 1, t1, pk, _THIN["p1"], _ARM["p1"], zeros))
        photons.append((pt[acc], 2, t2[acc] - s.delta_t_ns, pk[acc], _THIN["p2"], _ARM["p2"], zeros[acc]))

    for fid, mean in ((1, r.p1_uncorr), (2, r.p2_uncorr)):
        if mean <= 0:
            continue
        n = _poisson_icdf(crng.uniform(keys, _BG_N[fid]), mean)
        bt, bk, idx = _expand(trials, keys, n)
        span = s.write_duration_ns if fid == 1 else min(s.read_duration_ns, s.window_ns)
        photons.append((bt, fid, crng.uniform(bk, _BG_T[fid], idx) * span, bk, _THIN[fid], _ARM[fid], idx))

    out_t, out_c, out_ps = [], [], []
    for pt, fid, tns, pk, thin_stream, arm_stream, idx in photons:
        eta = r.eta1 if fid == 1 else r.eta2
        keep = crng.uniform(pk, thin_stream, idx) < eta
        arm_b = crng.uniform(pk[keep], arm_stream, idx[keep]) >= 0.5
        out_t.append(pt[keep])
        out_c.append(2 * (fid - 1) + arm_b.astype(np.int64))
        out_ps.append(tns[keep])

    if r.dark_per_window > 0:
        for code in range(4):
            n = _poisson_icdf(crng.uniform(keys, _DARK_N + code), r.dark_per_window)
            dt, dk, idx = _expand(trials, keys, n)
            out_t.append(dt)
            out_c.append(np.full(dt.size, code, dtype=np.int64))
            out_ps.append(crng.uniform(dk, _DARK_T + code, idx) * s.window_ns)

    if not out_t:
        return (np.empty(0, np.int64), np.empty(0, np.int8), np.empty(0, np.int64))
    ps = np.rint(np.concatenate(out_ps) * 1000.0).astype(np.int64)
    np.clip(ps, 0, window_ps - 1, out=ps)
    return np.concatenate(out_t), np.concatenate(out_c).astype(np.int8), ps


def _chunk_bounds(start: int, stop: int, chunk: int):
    return [(a, min(a + chunk, stop)) for a in range(start, stop, chunk)]


def simulate(config: SimConfig, workers: int = 1, trial_range: tuple[int, int] | None = None,
             chunk_trials: int = CHUNK_TRIALS) -> EventRecord:
    """Generate an :class:`EventRecord` for ``config``.

    ``trial_range`` restricts generation to trials ``[a, b)`` of the same
    experiment; the result for any trial is identical to the full run. The
    output never depends on ``workers`` or ``chunk_trials``.
    """
    m = int(config.schedule.trial_count)
    a, b = trial_range if trial_range is not None else (0, m)
    if not 0 <= a <= b <= m:
        raise ValueError(f"trial_range {trial_range} outside [0, {m}]")
    bounds = _chunk_bounds(a, b, chunk_trials)
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, [config] * len(bounds),
                                  [lo for lo, _ in bounds], [hi for _, hi in bounds]))
    else:
        parts = [_simulate_chunk(config, lo, hi) for lo, hi in bounds]
    metadata = {"config." + k: v for k, v in config.to_flat().items()}
    metadata["generator"] = "photopair.simulate"
    if trial_range is not None:
        metadata["trial_range"] = f"{a}:{b}"
    if not parts:
        return EventRecord.empty(config.schedule, metadata)
    return EventRecord.from_arrays(
        config.schedule,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        metadata,
    )


def default_coherence(k_hz: float = 1.1e6, polarization: Polarization = Polarization.UNPOLARIZED) -> CoherenceModel:
    return CoherenceModel(ZeemanScheme(polarization=polarization), FieldInhomogeneity(k_hz))
