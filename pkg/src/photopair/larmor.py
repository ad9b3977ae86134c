"""Spin-wave dephasing from Larmor precession in an inhomogeneous field.

A stored coherence between ground sublevels ``|F_a, m_a>`` and
``|F_b, m_b>`` precesses at ``(g_a m_a - g_b m_b) mu_B B / h``. With a
linear field profile across the sample the precession frequencies of one
channel spread uniformly over a band of width ``mu * K`` where
``mu = (g_a m_a - g_b m_b) / g_ref`` and ``K = mu_B g_ref L b / h``.
Averaging the phase factor over that band gives an amplitude
``sinc(pi mu K T)``; different channels end in distinguishable Zeeman
states and are summed incoherently, so

    C(T) = sum_channels w * sinc(pi mu K T)**2 * residual(T)

Cs 6S1/2 Lande factors default to g(F=4) = +1/4, g(F=3) = -1/4
(D. A. Steck, "Cesium D Line Data", table of ground-state g_F values:
+0.2501 and -0.2513).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .events import TrialSchedule
from .kinetics import PairKinetics

# CODATA 2018 Bohr magneton over Planck constant, Hz per gauss.
MU_B_OVER_H_HZ_PER_G = 1.399624604e6


class Polarization(enum.Enum):
    UNPOLARIZED = "unpolarized"
    CLOCK = "clock"


def allowed_channels(f_a: int = 4, f_b: int = 3) -> list[tuple[int, int]]:
    """(m_a, m_b) pairs reachable by a two-photon Raman step (|m_a - m_b| <= 2)."""
    return [(ma, mb) for mb in range(-f_b, f_b + 1) for ma in range(-f_a, f_a + 1) if abs(ma - mb) <= 2]


@dataclass(frozen=True)
class ZeemanScheme:
    f_a: int = 4
    f_b: int = 3
    g_a: float = 0.25
    g_b: float = -0.25
    g_ref: float = 0.25
    population_weights: Mapping[tuple[int, int], float] = field(default_factory=dict)
    polarization: Polarization = Polarization.UNPOLARIZED

    def __post_init__(self):
        weights = dict(self.population_weights)
        if not weights:
            if self.polarization is Polarization.CLOCK:
                weights = {(0, 0): 1.0}
            else:
                chans = allowed_channels(self.f_a, self.f_b)
                weights = {c: 1.0 / len(chans) for c in chans}
        for (ma, mb), w in weights.items():
            if abs(ma) > self.f_a or abs(mb) > self.f_b or abs(ma - mb) > 2:
                raise ValueError(f"channel ({ma}, {mb}) not allowed for F_a={self.f_a}, F_b={self.f_b}")
            if not (w >= 0 and math.isfinite(w)):
                raise ValueError(f"weight for ({ma}, {mb}) must be finite and >= 0")
        total = sum(weights.values())
        if total <= 0:
            raise ValueError("population weights sum to zero")
        if abs(total - 1.0) > 1e-12:
            weights = {k: v / total for k, v in weights.items()}
        if self.polarization is Polarization.CLOCK and any(
                w > 0 for c, w in weights.items() if c != (0, 0)):
            raise ValueError("clock-polarized scheme must put all weight on (0, 0)")
        if self.g_ref == 0:
            raise ValueError("g_ref must be nonzero")
        object.__setattr__(self, "population_weights", weights)

    @classmethod
    def unpolarized(cls, **kw) -> "ZeemanScheme":
        return cls(polarization=Polarization.UNPOLARIZED, **kw)

    @classmethod
    def clock(cls, **kw) -> "ZeemanScheme":
        return cls(polarization=Polarization.CLOCK, **kw)

    def detuning_factor(self, m_a: int, m_b: int) -> float:
        """Relative precession rate of the (m_a, m_b) coherence in units of K."""
        return (self.g_a * m_a - self.g_b * m_b) / self.g_ref

    def rate_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct |precession factors| and their summed weights."""
        acc: dict[float, float] = {}
        for (ma, mb), w in self.population_weights.items():
            mu = round(abs(self.detuning_factor(ma, mb)), 12)
            acc[mu] = acc.get(mu, 0.0) + w
        mus = np.array(sorted(acc))
        return mus, np.array([acc[m] for m in mus])


@dataclass(frozen=True)
class FieldInhomogeneity:
    k_hz: float = 1.1e6
    profile: str = "linear"

    def __post_init__(self):
        if not math.isfinite(self.k_hz):
            raise ValueError("K must be finite")
        if self.profile != "linear":
            raise ValueError(f"unsupported field profile {self.profile!r}")


@dataclass(frozen=True)
class CoherenceModel:
    scheme: ZeemanScheme = field(default_factory=ZeemanScheme)
    inhomogeneity: FieldInhomogeneity = field(default_factory=FieldInhomogeneity)
    residual_decay_time_ns: float | None = None

    def __post_init__(self):
        if self.residual_decay_time_ns is not None and not self.residual_decay_time_ns > 0:
            raise ValueError("residual decay time must be > 0 when set")

    def with_polarization(self, polarization: Polarization) -> "CoherenceModel":
        s = self.scheme
        scheme = ZeemanScheme(s.f_a, s.f_b, s.g_a, s.g_b, s.g_ref,
                              {} if polarization is not s.polarization else s.population_weights,
                              polarization)
        return CoherenceModel(scheme, self.inhomogeneity, self.residual_decay_time_ns)


def k_from_geometry(l_mm: float, b_gauss_per_cm: float, g: float) -> float:
    """Spread K = mu_B g L b / h (Hz) of Zeeman frequencies across a sample of size L."""
    for v in (l_mm, b_gauss_per_cm, g):
        if not math.isfinite(v):
            raise ValueError("inputs must be finite")
    if l_mm <= 0:
        raise ValueError("L must be > 0")
    return MU_B_OVER_H_HZ_PER_G * g * (l_mm / 10.0) * b_gauss_per_cm


def coherence(model: CoherenceModel, t_ns):
    """Retrieval coherence C(T) after storage time ``t_ns`` (scalar or array)."""
    t = np.asarray(t_ns, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("storage time must be >= 0")
    mus, weights = model.scheme.rate_weights()
    x = np.multiply.outer(t * (model.inhomogeneity.k_hz * 1e-9), mus)
    c = np.sinc(x) ** 2 @ weights
    c = np.where(t == 0, 1.0, c)  # exact despite rounding in the weight sum
    if model.residual_decay_time_ns is not None:
        c = c * np.exp(-(t / model.residual_decay_time_ns) ** 2)
    c = np.clip(c, 0.0, 1.0)
    return float(c) if c.ndim == 0 else c


def pair_density(model: CoherenceModel, kinetics: PairKinetics, schedule: TrialSchedule, t1_ns, t2_ns):
    """Joint density (1/ns^2) for a heralded pair at (t1, t2) on the common axis.

    f = I_w(t1) * g_ret(t2 - t_start(t1)) * C(t2 - t1), with I_w the normalized
    rectangular write envelope, t_start = max(t1 + delta0, delta_t), and f = 0
    unless t2 falls within the read pulse (clipped to the detection window).
    The integral of f is the probability that a heralded excitation yields a
    field-2 photon in the detection mode.
    """
    t1 = np.asarray(t1_ns, dtype=float)
    t2 = np.asarray(t2_ns, dtype=float)
    t1, t2 = np.broadcast_arrays(t1, t2)
    inside = (t1 >= 0) & (t1 < schedule.write_duration_ns)
    inside &= (t2 >= schedule.delta_t_ns) & (t2 < schedule.read_end_ns)
    out = np.zeros(t1.shape)
    if np.any(inside):
        a, b = t1[inside], t2[inside]
        start = kinetics.retrieval_start(a, schedule.delta_t_ns)
        g = kinetics.kernel_pdf(b - start)
        live = g > 0
        val = np.zeros_like(g)
        val[live] = g[live] * coherence(model, b[live] - a[live])
        out[inside] = val / schedule.write_duration_ns
    return float(out) if out.ndim == 0 else out


def pair_probability(model: CoherenceModel, kinetics: PairKinetics, schedule: TrialSchedule,
                     step_ns: float = 1.0) -> float:
    """Midpoint-rule integral of :func:`pair_density` over the detection windows."""
    t1 = np.arange(step_ns / 2, schedule.write_duration_ns, step_ns)
    t2 = np.arange(schedule.delta_t_ns + step_ns / 2, schedule.read_end_ns, step_ns)
    if t1.size == 0 or t2.size == 0:
        return 0.0
    f = pair_density(model, kinetics, schedule, t1[:, None], t2[None, :])
    return float(f.sum() * step_ns * step_ns)


def predict_g12(model: CoherenceModel, kinetics: PairKinetics, schedule: TrialSchedule,
                delta_t_list: Iterable[float], scale: float, step_ns: float = 1.0) -> list[tuple[float, float]]:
    """Model correlation curve g12(dt) = 1 + scale * P(dt) on a fixed quadrature grid."""
    delta_t_list = list(delta_t_list)
    if not delta_t_list:
        raise ValueError("delta_t_list is empty")
    if not (math.isfinite(scale) and scale >= 0):
        raise ValueError("scale must be finite and >= 0")
    out = []
    for dt in delta_t_list:
        if dt < 0:
            raise ValueError("delta_t must be >= 0")
        p = pair_probability(model, kinetics, schedule.with_delta_t(float(dt)), step_ns)
        out.append((float(dt), 1.0 + scale * p))
    return out


@dataclass(frozen=True)
class HalfLife:
    """Half-maximum decay point of a curve. ``tau_ns`` is None when not reached."""

    tau_ns: float | None
    range_end_ns: float
    peak_at_ns: float

    @property
    def determined(self) -> bool:
        return self.tau_ns is not None


def fit_decoherence_time(curve: Sequence[tuple[float, float]], baseline: float = 1.0) -> HalfLife:
    """Abscissa where ``value - baseline`` first drops to half its maximum.

    Use ``baseline=1`` for normalized correlation curves and ``baseline=0``
    for C(T). The crossing is located by linear interpolation between the
    bracketing samples.
    """
    pts = sorted((float(x), float(y)) for x, y in curve)
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts]) - baseline
    if x.size == 0:
        raise ValueError("empty curve")
    i_max = int(np.argmax(y))
    if i_max == x.size - 1:
        # still rising at the end of the range
        return HalfLife(None, float(x[-1]), float(x[i_max]))
    if x.size - 1 - i_max < 4:
        raise ValueError("need at least 4 points past the curve maximum")
    half = y[i_max] / 2.0
    below = np.flatnonzero(y[i_max:] <= half)
    if y[i_max] <= 0 or below.size == 0:
        return HalfLife(None, float(x[-1]), float(x[i_max]))
    j = i_max + int(below[0])
    x0, x1, y0, y1 = x[j - 1], x[j], y[j - 1], y[j]
    tau = x1 if y1 == y0 else x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    return HalfLife(float(tau), float(x[-1]), float(x[i_max]))
