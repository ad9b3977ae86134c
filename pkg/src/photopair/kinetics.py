"""Retrieval kernel for the read-out photon.

The delay between the start of retrieval and emission of the field-2 photon
follows a gamma distribution whose peak sits at ``retrieval_delay_ns`` and
whose full width at half maximum is ``retrieval_fwhm_ns``. The shape
parameter is solved numerically from the width constraint.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats


def _gamma_fwhm(shape: float, scale: float) -> float:
    """FWHM of a gamma(shape > 1) density.

    With x = t / mode the half-maximum condition reduces to
    ln x - x + 1 = -ln 2 / (shape - 1), solved by the two real branches of
    the Lambert W function.
    """
    mode = (shape - 1.0) * scale
    c = math.log(2.0) / (shape - 1.0)
    arg = -math.exp(-1.0 - c)
    x_lo = -special.lambertw(arg, 0).real
    x_hi = -special.lambertw(arg, -1).real
    return mode * (x_hi - x_lo)


@functools.lru_cache(maxsize=256)
def gamma_params_for(peak_ns: float, fwhm_ns: float) -> tuple[float, float]:
    """(shape, scale) of the gamma density with the given mode and FWHM.

    For a fixed mode the FWHM falls monotonically with the shape parameter,
    from infinity as shape -> 1 towards zero, so the root is unique.
    """
    if not (peak_ns > 0 and fwhm_ns > 0):
        raise ValueError("retrieval peak and FWHM must be positive")

    def width_error(log_km1):
        k = 1.0 + math.exp(log_km1)
        return _gamma_fwhm(k, peak_ns / (k - 1.0)) - fwhm_ns

    # shape - 1 in [0.02, 1e6] covers FWHM/peak ratios from ~2e-3 to ~38
    log_km1 = optimize.brentq(width_error, math.log(0.02), math.log(1e6), xtol=1e-13)
    k = 1.0 + math.exp(log_km1)
    return k, peak_ns / (k - 1.0)


@dataclass(frozen=True)
class PairKinetics:
    """Timing of the correlated read-out.

    ``delta0_ns`` is the intrinsic delay after the heralding photon before
    retrieval can begin; retrieval also never starts before the read pulse.
    """

    delta0_ns: float = 0.0
    retrieval_delay_ns: float = 50.0
    retrieval_fwhm_ns: float = 60.0

    def __post_init__(self):
        if not self.delta0_ns >= 0:
            raise ValueError("delta0_ns must be >= 0")
        if not (self.retrieval_delay_ns > 0 and self.retrieval_fwhm_ns > 0):
            raise ValueError("retrieval delay and FWHM must be > 0")

    @property
    def gamma_shape(self) -> float:
        return gamma_params_for(float(self.retrieval_delay_ns), float(self.retrieval_fwhm_ns))[0]

    @property
    def gamma_scale(self) -> float:
        return gamma_params_for(float(self.retrieval_delay_ns), float(self.retrieval_fwhm_ns))[1]

    @property
    def kernel_mean_ns(self) -> float:
        return self.gamma_shape * self.gamma_scale

    def kernel_pdf(self, delay_ns):
        """Retrieval kernel density (1/ns); zero for negative delay."""
        d = np.asarray(delay_ns, dtype=float)
        out = np.zeros_like(d)
        pos = d > 0
        out[pos] = stats.gamma.pdf(d[pos], self.gamma_shape, scale=self.gamma_scale)
        return out if out.ndim else float(out)

    def kernel_ppf(self, u):
        """Inverse CDF of the kernel; maps uniforms on [0, 1) to delays."""
        return special.gammaincinv(self.gamma_shape, np.asarray(u, dtype=float)) * self.gamma_scale

    def retrieval_start(self, t1_ns, delta_t_ns: float):
        return np.maximum(np.asarray(t1_ns, dtype=float) + self.delta0_ns, delta_t_ns)
