"""Photon-pair correlation simulator and coincidence analysis toolkit."""

from .analysis import (
    BinningSpec,
    CoincidenceHistogram,
    Kind,
    Pairing,
    RatioSurface,
    accidental_histogram,
    auto_histogram,
    cross_histogram,
    g12_integrated,
    profile_peak,
    ratio_surface,
    ridge_profile,
)
from .events import DetectionEvent, DetectorChannel, EventRecord, TrialSchedule, read_record, write_record
from .kinetics import PairKinetics
from .larmor import (
    CoherenceModel,
    FieldInhomogeneity,
    Polarization,
    ZeemanScheme,
    coherence,
    fit_decoherence_time,
    k_from_geometry,
    pair_density,
    predict_g12,
)
from .sim import SimConfig, SourceRates, sample_pair, simulate

__version__ = "0.1.0"
