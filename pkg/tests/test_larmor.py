import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from photopair.events import TrialSchedule
from photopair.kinetics import PairKinetics
from photopair.larmor import (
    CoherenceModel,
    FieldInhomogeneity,
    Polarization,
    ZeemanScheme,
    allowed_channels,
    coherence,
    fit_decoherence_time,
    k_from_geometry,
    pair_density,
    pair_probability,
    predict_g12,
)

UNPOL = CoherenceModel()
CLOCK = UNPOL.with_polarization(Polarization.CLOCK)

# z-grid oracle (tests/oracles.py, 1e5 positions) evaluated once and frozen.
ORACLE_C = {
    50.0: 0.8647079777479825,
    100.0: 0.6031755438297192,
    175.0: 0.35993729449543876,
    200.0: 0.319239964253272,
    400.0: 0.16551331646765552,
    1000.0: 0.09552094851871501,
    10000.0: 0.09090909090909091,
}


def test_channel_enumeration():
    chans = allowed_channels()
    assert len(chans) == 33
    assert all(abs(a) <= 4 and abs(b) <= 3 and abs(a - b) <= 2 for a, b in chans)
    assert sum(1 for a, b in chans if ZeemanScheme().detuning_factor(a, b) == 0) == 3


def test_weights_normalized_and_validated():
    s = ZeemanScheme(population_weights={(0, 0): 2.0, (1, 1): 6.0})
    assert sum(s.population_weights.values()) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        ZeemanScheme(population_weights={(4, 1): 1.0})  # |m_a - m_b| > 2
    with pytest.raises(ValueError):
        ZeemanScheme(population_weights={(0, 0): -1.0, (1, 1): 2.0})
    with pytest.raises(ValueError):
        ZeemanScheme(population_weights={(1, 1): 1.0}, polarization=Polarization.CLOCK)
    assert ZeemanScheme(polarization=Polarization.CLOCK).population_weights == {(0, 0): 1.0}


def test_k_from_geometry():
    assert k_from_geometry(3.6, 8.4, 0.25) == pytest.approx(1.06e6, rel=5e-3)
    assert k_from_geometry(2.0, 0.0, 0.25) == 0.0
    assert k_from_geometry(1.0, 1.0, 0.25) == pytest.approx(oracles.k_hz(1.0, 1.0, 0.25), rel=1e-6)
    with pytest.raises(ValueError):
        k_from_geometry(float("nan"), 1.0, 0.25)


@pytest.mark.parametrize("t, expected", sorted(ORACLE_C.items()))
def test_coherence_matches_frozen_oracle(t, expected):
    assert coherence(UNPOL, t) == pytest.approx(expected, abs=1e-8)


def test_frozen_oracle_still_reproducible():
    assert oracles.coherence_zgrid(175.0) == pytest.approx(ORACLE_C[175.0], abs=1e-12)


def test_coherence_trivial_cases():
    assert coherence(UNPOL, 0.0) == 1.0
    homogeneous = CoherenceModel(inhomogeneity=FieldInhomogeneity(0.0))
    assert np.all(coherence(homogeneous, np.linspace(0, 1e4, 11)) == 1.0)
    assert coherence(CLOCK, 10_000.0) == 1.0
    assert np.all(coherence(CLOCK, np.linspace(0, 1e5, 101)) == 1.0)
    with pytest.raises(ValueError):
        coherence(UNPOL, -1.0)


def test_unpolarized_floor_is_field_insensitive_fraction():
    assert coherence(UNPOL, 1e6) == pytest.approx(3 / 33, abs=1e-6)


def test_residual_decay_envelope():
    m = CoherenceModel(CLOCK.scheme, residual_decay_time_ns=1000.0)
    assert coherence(m, 1000.0) == pytest.approx(math.exp(-1.0))
    with pytest.raises(ValueError):
        CoherenceModel(residual_decay_time_ns=0.0)


@st.composite
def schemes(draw):
    chans = allowed_channels()
    picked = draw(st.lists(st.sampled_from(chans), min_size=1, max_size=8, unique=True))
    w = draw(st.lists(st.floats(min_value=0.01, max_value=10), min_size=len(picked), max_size=len(picked)))
    return dict(zip(picked, w))


@given(schemes(), st.floats(min_value=0, max_value=5e6), st.floats(min_value=0, max_value=2e4))
def test_coherence_bounds_and_symmetries(weights, k, t):
    m = CoherenceModel(ZeemanScheme(population_weights=weights), FieldInhomogeneity(k))
    c = coherence(m, t)
    assert 0.0 <= c <= 1.0
    assert coherence(m, 0.0) == 1.0
    neg_k = CoherenceModel(m.scheme, FieldInhomogeneity(-k))
    assert coherence(neg_k, t) == pytest.approx(c, abs=1e-12)
    flipped = CoherenceModel(ZeemanScheme(population_weights={(-a, -b): w for (a, b), w in weights.items()}),
                             FieldInhomogeneity(k))
    assert coherence(flipped, t) == pytest.approx(c, abs=1e-12)


@given(schemes(), st.floats(min_value=0, max_value=3e6), st.floats(min_value=0, max_value=3000))
def test_coherence_matches_zgrid_oracle_for_any_weights(weights, k, t):
    m = CoherenceModel(ZeemanScheme(population_weights=weights), FieldInhomogeneity(k))
    total = sum(weights.values())
    expected = oracles.coherence_zgrid(t, k_hz=k, weights={c: w / total for c, w in weights.items()}, n=20_000)
    assert coherence(m, t) == pytest.approx(expected, abs=1e-6)


# pair density

SCHED50 = TrialSchedule(delta_t_ns=50.0)
KIN = PairKinetics()


def test_pair_density_zero_outside_windows():
    assert pair_density(UNPOL, KIN, SCHED50, -1.0, 100.0) == 0.0
    assert pair_density(UNPOL, KIN, SCHED50, 150.0, 200.0) == 0.0
    assert pair_density(UNPOL, KIN, SCHED50, 10.0, 49.9) == 0.0
    assert pair_density(UNPOL, KIN, SCHED50, 10.0, 170.0) == 0.0  # read pulse over
    assert pair_density(UNPOL, KIN, SCHED50, 10.0, 100.0) > 0.0


@given(st.floats(min_value=-50, max_value=250), st.floats(min_value=-50, max_value=700),
       st.floats(min_value=0, max_value=400))
def test_pair_density_nonnegative_and_supported_after_read_start(t1, t2, dt):
    s = TrialSchedule(delta_t_ns=dt)
    f = pair_density(UNPOL, KIN, s, t1, t2)
    assert f >= 0.0
    if t2 < dt:
        assert f == 0.0


def test_pair_density_ridge_at_50ns():
    t1 = np.arange(0.05, 150.0, 0.1)
    d = np.arange(0.05, SCHED50.read_end_ns, 0.1)
    ridge = pair_density(UNPOL, KIN, SCHED50, t1[:, None], t1[:, None] + d[None, :]).sum(axis=0)
    i = int(np.argmax(ridge))
    above = d[ridge >= ridge[i] / 2]
    assert abs(d[i] - 50.0) <= 5.0
    assert abs(above[-1] - above[0] - 60.0) <= 15.0


def test_pair_density_decays_beyond_tau_d():
    # dephasing suppression along the ridge relative to a field-insensitive ensemble
    T = np.arange(0.0, 1001.0, 1.0)
    tau = fit_decoherence_time(list(zip(T, coherence(UNPOL, T))), baseline=0.0).tau_ns
    s = TrialSchedule(delta_t_ns=200.0)
    t1 = 20.0
    T = np.arange(180.5, 300.0, 0.5)
    ratio = pair_density(UNPOL, KIN, s, t1, t1 + T) / pair_density(CLOCK, KIN, s, t1, t1 + T)
    assert tau < T[0]
    assert np.all(ratio < 0.5)
    assert np.all(np.diff(ratio) < 0)


def test_pair_probability_is_accepted_fraction():
    # C = 1 and no clamping: the kernel mass inside the 120 ns read pulse survives
    p = pair_probability(CLOCK, KIN, TrialSchedule(delta_t_ns=300.0), step_ns=0.5)
    expected = stats.gamma.cdf(120.0, KIN.gamma_shape, scale=KIN.gamma_scale)
    assert p == pytest.approx(expected, rel=1e-3)


# prediction

DTS = np.arange(0.0, 401.0, 10.0)


def test_predict_scale_zero_is_one():
    assert all(v == 1.0 for _, v in predict_g12(UNPOL, KIN, TrialSchedule(), DTS, 0.0))


def test_predict_shape_rise_peak_decay():
    curve = predict_g12(UNPOL, KIN, TrialSchedule(), DTS, 10.0)
    v = np.array([g for _, g in curve])
    peak_dt = DTS[int(np.argmax(v))]
    assert 50 <= peak_dt <= 150
    assert v[0] < v.max() and v[-1] < v.max()
    assert v[-1] - 1 < 0.35 * (v.max() - 1)


@given(st.floats(min_value=0, max_value=50), st.floats(min_value=0, max_value=50))
def test_predict_at_least_one_and_monotone_in_scale(a, b):
    lo, hi = sorted((a, b))
    g_lo = predict_g12(UNPOL, KIN, TrialSchedule(), [0.0, 150.0, 400.0], lo)
    g_hi = predict_g12(UNPOL, KIN, TrialSchedule(), [0.0, 150.0, 400.0], hi)
    assert all(x[1] >= 1.0 for x in g_lo)
    assert all(x[1] <= y[1] for x, y in zip(g_lo, g_hi))


def test_predict_errors():
    with pytest.raises(ValueError):
        predict_g12(UNPOL, KIN, TrialSchedule(), [], 1.0)
    with pytest.raises(ValueError):
        predict_g12(UNPOL, KIN, TrialSchedule(), [-5.0], 1.0)
    with pytest.raises(ValueError):
        predict_g12(UNPOL, KIN, TrialSchedule(), [0.0], -1.0)


def test_quadrature_converged():
    for dt in np.arange(0.0, 401.0, 50.0):
        s = TrialSchedule(delta_t_ns=float(dt))
        coarse = pair_probability(UNPOL, KIN, s, step_ns=1.0)
        fine = pair_probability(UNPOL, KIN, s, step_ns=0.5)
        assert abs(coarse - fine) < 0.005 * fine


def test_clock_beats_unpolarized_at_400ns():
    u = predict_g12(UNPOL, KIN, TrialSchedule(), [400.0], 1.0)[0][1] - 1
    c = predict_g12(CLOCK, KIN, TrialSchedule(), [400.0], 1.0)[0][1] - 1
    assert c >= 3 * u


# half-life fit

def test_half_life_of_exponential():
    tau = 120.0
    curve = [(t, 1.0 + 7.0 * math.exp(-t / tau)) for t in np.arange(0.0, 1000.0, 0.5)]
    assert fit_decoherence_time(curve).tau_ns == pytest.approx(tau * math.log(2), rel=0.01)


def test_half_life_not_determined():
    res = fit_decoherence_time([(t, 1.0 + t) for t in range(10)])
    assert not res.determined and res.range_end_ns == 9.0
    with pytest.raises(ValueError, match="4 points"):
        fit_decoherence_time([(0, 1.0), (1, 3.0), (2, 2.0), (3, 1.5)])


def test_half_life_of_model_coherence():
    T = np.arange(0.0, 1001.0, 1.0)
    res = fit_decoherence_time(list(zip(T, coherence(UNPOL, T))), baseline=0.0)
    assert 100 <= res.tau_ns <= 250
    zgrid = [(t, oracles.coherence_zgrid(t, n=20_000)) for t in np.arange(100.0, 151.0, 1.0)]
    crossing = next(t for t, c in zgrid if c <= 0.5)
    assert abs(res.tau_ns - crossing) <= 1.0
