"""Coincidence estimators on detection records.

All estimators count trials, not event pairs: a bin (pair) scores one for a
trial when the trial holds at least one qualifying event there. Bins are
aligned to each field's window start; field-2 bin labels are shifted by
``delta_t`` onto the common time axis.

Same-field (auto) coincidences are measured across the two arms of a 50/50
split. Two photons in the same bin land on different arms with probability
1/2 and the split halves each arm's share again, so the arm-coincidence
probability is a quarter of the same-mode factorial moment <n(n-1)>. The
auto estimator therefore carries a factor 4, which makes it commensurate with
the any-arm cross estimator: for coherent light both numerator and
denominator of R factorize and R -> 1.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .events import EventRecord

ARM_SPLIT_FACTOR = 4.0


class Kind(enum.Enum):
    CROSS12 = "cross12"
    AUTO1 = "auto1"
    AUTO2 = "auto2"
    ACCIDENTAL12 = "accidental12"


class Pairing(enum.Enum):
    ADJACENT = "adjacent"
    ALL_PAIRS = "all_pairs"


@dataclass(frozen=True)
class BinningSpec:
    """Bins of width ``tau_ns`` over ``[t_start_ns, t_end_ns)`` in window-relative time."""

    tau_ns: float
    t_start_ns: float
    t_end_ns: float

    def __post_init__(self):
        if not (self.tau_ns > 0 and math.isfinite(self.tau_ns)):
            raise ValueError("tau_ns must be finite and > 0")
        if not self.t_end_ns > self.t_start_ns:
            raise ValueError("t_end_ns must exceed t_start_ns")
        span = self.t_end_ns - self.t_start_ns
        n = math.floor(span / self.tau_ns + 1e-9)
        if n < 1:
            raise ValueError("window shorter than one bin")
        if abs(n * self.tau_ns - span) > 1e-9:
            warnings.warn(f"window {span} ns is not a multiple of tau={self.tau_ns} ns; "
                          f"truncating to {n} bins", stacklevel=3)

    @classmethod
    def for_window(cls, tau_ns: float, window_ns: float) -> "BinningSpec":
        return cls(tau_ns, 0.0, window_ns)

    @property
    def n_bins(self) -> int:
        return math.floor((self.t_end_ns - self.t_start_ns) / self.tau_ns + 1e-9)

    @property
    def tau_ps(self) -> int:
        return int(round(self.tau_ns * 1000))

    @property
    def start_ps(self) -> int:
        return int(round(self.t_start_ns * 1000))

    def bin_index(self, time_ps: np.ndarray) -> np.ndarray:
        """Bin of each time; -1 outside the binned range. Exact integer arithmetic."""
        idx = (np.asarray(time_ps, dtype=np.int64) - self.start_ps) // self.tau_ps
        idx[(idx < 0) | (idx >= self.n_bins)] = -1
        return idx

    def edges(self, offset_ns: float = 0.0) -> np.ndarray:
        return offset_ns + self.t_start_ns + self.tau_ns * np.arange(self.n_bins)


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """2-D binned trial counts. Auto kinds hold counts on the diagonal only."""

    kind: Kind
    binning1: BinningSpec
    binning2: BinningSpec
    counts: np.ndarray
    trials_used: int
    offset1_ns: float = 0.0
    offset2_ns: float = 0.0

    @property
    def factor(self) -> float:
        return ARM_SPLIT_FACTOR if self.kind in (Kind.AUTO1, Kind.AUTO2) else 1.0

    @property
    def probability(self) -> np.ndarray:
        if self.trials_used <= 0:
            return np.zeros(self.counts.shape)
        return self.factor * self.counts / self.trials_used

    @property
    def sigma(self) -> np.ndarray:
        if self.trials_used <= 0:
            return np.zeros(self.counts.shape)
        return self.factor * np.sqrt(self.counts) / self.trials_used

    @property
    def t1_ns(self) -> np.ndarray:
        return self.binning1.edges(self.offset1_ns)

    @property
    def t2_ns(self) -> np.ndarray:
        return self.binning2.edges(self.offset2_ns)

    def diagonal_counts(self) -> np.ndarray:
        return np.diagonal(self.counts).copy()


@dataclass(frozen=True, eq=False)
class RatioSurface:
    binning1: BinningSpec
    binning2: BinningSpec
    R: np.ndarray
    sigma_R: np.ndarray
    mask: np.ndarray
    offset1_ns: float = 0.0
    offset2_ns: float = 0.0

    @property
    def t1_ns(self) -> np.ndarray:
        return self.binning1.edges(self.offset1_ns)

    @property
    def t2_ns(self) -> np.ndarray:
        return self.binning2.edges(self.offset2_ns)

    def max(self) -> tuple[float, float, float, float]:
        """(R, sigma_R, t1, t2) at the largest defined R; NaNs when nothing is defined."""
        if not self.mask.any():
            return (math.nan, math.nan, math.nan, math.nan)
        r = np.where(self.mask, self.R, -np.inf)
        i, j = np.unravel_index(int(np.argmax(r)), r.shape)
        return float(self.R[i, j]), float(self.sigma_R[i, j]), float(self.t1_ns[i]), float(self.t2_ns[j])


def default_binning(record: EventRecord, tau_ns: float) -> BinningSpec:
    return BinningSpec.for_window(tau_ns, record.schedule.window_ns)


def _occupancy(record: EventRecord, field_id: int, binning: BinningSpec):
    """Unique (trial, bin) pairs with >= 1 event of ``field_id``, sorted by trial then bin."""
    sel = record.field_id == field_id
    b = binning.bin_index(record.time_ps[sel])
    t = record.trial[sel]
    ok = b >= 0
    t, b = t[ok], b[ok]
    if t.size == 0:
        return t, b
    key = np.unique(t * binning.n_bins + b)
    return key // binning.n_bins, key % binning.n_bins


def _join(ta, va, tb, vb):
    """All (va[i], vb[j]) with ta[i] == tb[j]; inputs sorted by trial. O(output)."""
    lo = np.searchsorted(tb, ta, side="left")
    hi = np.searchsorted(tb, ta, side="right")
    n = hi - lo
    ia = np.repeat(np.arange(ta.size), n)
    ib = np.repeat(lo, n) + (np.arange(int(n.sum())) - np.repeat(np.cumsum(n) - n, n))
    return va[ia], vb[ib]


def _pair_counts(ta, va, tb, vb, n1: int, n2: int) -> np.ndarray:
    a, b = _join(ta, va, tb, vb)
    return np.bincount(a * n2 + b, minlength=n1 * n2).reshape(n1, n2).astype(np.int64)


def _binnings(record, binning, binning2=None):
    if isinstance(binning, (int, float)):
        binning = default_binning(record, float(binning))
    return binning, binning2 or binning


def cross_histogram(record: EventRecord, binning: BinningSpec | float,
                    binning2: BinningSpec | None = None) -> CoincidenceHistogram:
    """p_tau(t1, t2): trials with a field-1 event in bin t1 and a field-2 event in bin t2."""
    b1, b2 = _binnings(record, binning, binning2)
    t1, v1 = _occupancy(record, 1, b1)
    t2, v2 = _occupancy(record, 2, b2)
    counts = _pair_counts(t1, v1, t2, v2, b1.n_bins, b2.n_bins)
    return CoincidenceHistogram(Kind.CROSS12, b1, b2, counts, int(record.schedule.trial_count),
                                0.0, record.schedule.delta_t_ns)


def accidental_histogram(record: EventRecord, binning: BinningSpec | float,
                         pairing: Pairing = Pairing.ADJACENT,
                         binning2: BinningSpec | None = None) -> CoincidenceHistogram:
    """q_tau(t1, t2): field 1 from trial j, field 2 from a different trial k."""
    m = int(record.schedule.trial_count)
    if m < 2:
        raise ValueError("insufficient trials: need at least 2 for cross-trial coincidences")
    b1, b2 = _binnings(record, binning, binning2)
    t1, v1 = _occupancy(record, 1, b1)
    t2, v2 = _occupancy(record, 2, b2)
    if pairing is Pairing.ADJACENT:
        counts = _pair_counts(t1, v1, t2 - 1, v2, b1.n_bins, b2.n_bins)
        used = m - 1
    else:
        s1 = np.bincount(v1, minlength=b1.n_bins).astype(np.int64)
        s2 = np.bincount(v2, minlength=b2.n_bins).astype(np.int64)
        counts = np.outer(s1, s2) - _pair_counts(t1, v1, t2, v2, b1.n_bins, b2.n_bins)
        used = m * (m - 1)
    return CoincidenceHistogram(Kind.ACCIDENTAL12, b1, b2, counts, used, 0.0, record.schedule.delta_t_ns)


def auto_histogram(record: EventRecord, binning: BinningSpec | float, field_id: int) -> CoincidenceHistogram:
    """p_tau(t, t) for one field from arm-A/arm-B coincidences in the same bin."""
    if field_id not in (1, 2):
        raise ValueError("field_id must be 1 or 2")
    b, _ = _binnings(record, binning)
    sel = record.field_id == field_id
    idx = b.bin_index(record.time_ps[sel])
    ok = idx >= 0
    trial, arm, idx = record.trial[sel][ok], record.arm[sel][ok], idx[ok]
    n = b.n_bins
    diag = np.zeros(n, dtype=np.int64)
    if trial.size:
        key = np.unique((trial * n + idx) * 2 + arm)
        cell = key // 2
        both = cell[1:][(cell[1:] == cell[:-1])]
        diag = np.bincount(both % n, minlength=n).astype(np.int64)
    offset = 0.0 if field_id == 1 else record.schedule.delta_t_ns
    kind = Kind.AUTO1 if field_id == 1 else Kind.AUTO2
    return CoincidenceHistogram(kind, b, b, np.diag(diag), int(record.schedule.trial_count), offset, offset)


def ratio_surface(cross: CoincidenceHistogram, auto1: CoincidenceHistogram,
                  auto2: CoincidenceHistogram) -> RatioSurface:
    """R = p12^2 / (p11 p22) per bin pair with first-order Poisson errors."""
    if cross.kind is not Kind.CROSS12 or auto1.kind is not Kind.AUTO1 or auto2.kind is not Kind.AUTO2:
        raise ValueError("ratio_surface needs (cross12, auto1, auto2) histograms")
    if auto1.binning1 != cross.binning1 or auto2.binning1 != cross.binning2:
        raise ValueError("binning mismatch between cross and auto histograms")
    if auto1.offset1_ns != cross.offset1_ns or auto2.offset1_ns != cross.offset2_ns:
        raise ValueError("time-axis offset mismatch between cross and auto histograms")
    n12 = cross.counts.astype(float)
    n11 = auto1.diagonal_counts().astype(float)[:, None]
    n22 = auto2.diagonal_counts().astype(float)[None, :]
    mask = (n12 > 0) & (n11 > 0) & (n22 > 0)
    p12 = cross.probability
    p11 = np.diagonal(auto1.probability)[:, None]
    p22 = np.diagonal(auto2.probability)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(mask, p12 ** 2 / (p11 * p22), np.nan)
        s = np.where(mask, r * np.sqrt(4.0 / n12 + 1.0 / n11 + 1.0 / n22), np.nan)
    return RatioSurface(cross.binning1, cross.binning2, r, s, mask, cross.offset1_ns, cross.offset2_ns)


def g12_integrated(record: EventRecord) -> tuple[float, float]:
    """Normalized cross-correlation over the whole detection windows."""
    m = int(record.schedule.trial_count)
    if m < 2:
        raise ValueError("insufficient trials: need at least 2")
    f = record.field_id
    trials1 = np.unique(record.trial[f == 1])
    trials2 = np.unique(record.trial[f == 2])
    s1, s2 = trials1.size, trials2.size
    if s1 == 0 or s2 == 0:
        raise ValueError("no singles in one of the fields")
    c12 = np.intersect1d(trials1, trials2, assume_unique=True).size
    g = (c12 / m) / ((s1 / m) * (s2 / m))
    sigma = g * math.sqrt(1.0 / c12 + 1.0 / s1 + 1.0 / s2) if c12 else math.inf
    return g, sigma


@dataclass(frozen=True)
class RidgeProfile:
    dt_ns: np.ndarray
    probability: np.ndarray
    sigma: np.ndarray

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.dt_ns.tolist(), self.probability.tolist(), self.sigma.tolist()))


def ridge_profile(hist: CoincidenceHistogram) -> RidgeProfile:
    """Collapse a cross or accidental histogram onto t2 - t1 (anti-diagonal sums)."""
    if hist.kind not in (Kind.CROSS12, Kind.ACCIDENTAL12):
        raise ValueError("ridge_profile needs a cross or accidental histogram")
    if abs(hist.binning1.tau_ns - hist.binning2.tau_ns) > 1e-12:
        raise ValueError("ridge_profile needs equal bin widths on both axes")
    n1, n2 = hist.counts.shape
    d = np.subtract.outer(np.arange(n2), np.arange(n1)).T  # d[i, j] = j - i
    counts = np.bincount((d + n1 - 1).ravel(), weights=hist.counts.ravel().astype(float),
                         minlength=n1 + n2 - 1)
    origin = (hist.binning2.t_start_ns + hist.offset2_ns) - (hist.binning1.t_start_ns + hist.offset1_ns)
    dt = origin + hist.binning1.tau_ns * np.arange(-(n1 - 1), n2)
    norm = hist.trials_used if hist.trials_used > 0 else 1
    return RidgeProfile(dt, counts / norm, np.sqrt(counts) / norm)


def profile_peak(profile: RidgeProfile, smooth_bins: int = 3,
                 fit_half_width_ns: float = 20.0) -> tuple[float, float]:
    """(peak position, FWHM) of a ridge profile.

    The profile is smoothed with a centered boxcar of ``smooth_bins`` bins to
    locate the maximum and the half-maximum crossings (linearly
    interpolated). The peak position is then refined by a least-squares
    parabola through the unsmoothed profile within ``fit_half_width_ns`` of
    that maximum, which is far less noisy than a three-point vertex on a
    flat-topped ridge.
    """
    x, y_raw = profile.dt_ns, profile.probability
    y = y_raw
    if smooth_bins > 1:
        y = np.convolve(y_raw, np.ones(smooth_bins) / smooth_bins, mode="same")
    i = int(np.argmax(y))
    peak_x = float(x[i])
    near = np.abs(x - x[i]) <= fit_half_width_ns
    if fit_half_width_ns > 0 and near.sum() >= 3:
        c2, c1, _ = np.polyfit(x[near], y_raw[near], 2)
        if c2 < 0:
            vertex = -c1 / (2 * c2)
            if abs(vertex - x[i]) <= fit_half_width_ns:
                peak_x = float(vertex)
    half = y[i] / 2.0
    lo = i
    while lo > 0 and y[lo - 1] > half:
        lo -= 1
    hi = i
    while hi < y.size - 1 and y[hi + 1] > half:
        hi += 1
    left = x[lo] if lo == 0 else x[lo - 1] + (half - y[lo - 1]) * (x[lo] - x[lo - 1]) / (y[lo] - y[lo - 1])
    right = x[hi] if hi == y.size - 1 else x[hi] + (y[hi] - half) * (x[hi + 1] - x[hi]) / (y[hi] - y[hi + 1])
    return peak_x, float(right - left)
