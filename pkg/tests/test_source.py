import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdcnot.analysis import g2_with_error
from qdcnot.errors import ConfigError
from qdcnot.experiment import simulate_hbt
from qdcnot.source import (
    FWHM_TO_SIGMA,
    OverlapModel,
    SourceParams,
    brightness_in_bin,
    calibrate_background,
    effective_overlap,
    hbt_g2,
    mean_photons_per_pulse,
    sample_emissions,
    sample_pulse_pair,
)

TABLE = OverlapModel(table=((2000.0, 0.5), (400.0, 0.76)))


def test_brightness_examples():
    p = SourceParams(brightness_max=0.75, decay_time_ps=750.0)
    assert brightness_in_bin(p, 750.0) == pytest.approx(0.75 * (1 - math.exp(-1)), abs=1e-12)
    assert brightness_in_bin(p, 750.0) == pytest.approx(0.4741, abs=5e-5)
    assert brightness_in_bin(p, 0.0) == 0.0
    assert brightness_in_bin(p, math.inf) == 0.75


@given(a=st.floats(0, 1e5), b=st.floats(0, 1e5))
def test_brightness_monotone_and_bounded(a, b):
    p = SourceParams()
    lo, hi = sorted((a, b))
    assert brightness_in_bin(p, lo) <= brightness_in_bin(p, hi) <= p.brightness_max


def test_brightness_rejects_negative_bin():
    with pytest.raises(ConfigError):
        brightness_in_bin(SourceParams(), -1.0)


def test_overlap_models():
    assert effective_overlap(SourceParams(overlap=OverlapModel(0.5)), 123.0) == 0.5
    src = SourceParams(overlap=TABLE)
    assert effective_overlap(src, 400.0) == pytest.approx(0.76)
    assert effective_overlap(src, 1200.0) == pytest.approx(0.63)
    # clamped outside the table
    assert effective_overlap(src, 100.0) == pytest.approx(0.76)
    assert effective_overlap(src, 5000.0) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        effective_overlap(SourceParams(overlap=OverlapModel()), 400.0)
    with pytest.raises(ConfigError):
        effective_overlap(src, 0.0)


@pytest.mark.parametrize("kwargs", [
    {"brightness_max": 1.2}, {"decay_time_ps": 0.0}, {"g2_zero": -0.1},
    {"excitation_delay_ns": 7.0}, {"photon_statistics": "thermal"}, {"detection_efficiency": 2.0},
])
def test_source_params_invariants(kwargs):
    with pytest.raises(ConfigError):
        SourceParams(**kwargs)


def test_jitter_sigma():
    assert SourceParams(jitter_fwhm_ps=350.0).jitter_sigma_ps == pytest.approx(350.0 / 2.3548, rel=1e-4)
    assert FWHM_TO_SIGMA == pytest.approx(1 / (2 * math.sqrt(2 * math.log(2))))


def test_pulse_pair_extremes():
    rng = np.random.default_rng(1)
    for _ in range(50):
        events = sample_pulse_pair(SourceParams(brightness_max=1.0), rng)
        assert [e.pulse_index for e in events] == [0, 1]
        assert all(e.emission_time >= e.pulse_index * 2.3 for e in events)
        assert not any(e.is_background for e in events)
    assert sample_pulse_pair(SourceParams(brightness_max=0.0), rng) == []


def test_mean_photons_per_pulse():
    p = SourceParams(brightness_max=0.6)
    rng = np.random.default_rng(2)
    n = 20_000
    samples = [sample_pulse_pair(p, rng) for _ in range(n)]
    assert abs(mean_photons_per_pulse(p, samples) - 0.6) < 4 / math.sqrt(2 * n)


def test_emission_offsets_exponential():
    p = SourceParams(brightness_max=1.0, decay_time_ps=750.0)
    batch = sample_emissions(p, 200_000, np.random.default_rng(3))
    assert batch.offset_ps.min() >= 0
    assert batch.offset_ps.mean() == pytest.approx(750.0, rel=0.01)


def test_background_polarization_is_random():
    p = SourceParams(brightness_max=0.5, g2_zero=0.2)
    batch = sample_emissions(p, 200_000, np.random.default_rng(4))
    bg = batch.background
    assert bg.mean() > 0
    assert batch.polarization_h[bg].mean() == pytest.approx(0.5, abs=0.01)
    assert batch.polarization_h[~bg].all()


@given(b=st.floats(0.01, 1.0), g2=st.floats(1e-4, 0.49))
def test_calibration_inverts_hbt_model(b, g2):
    p = calibrate_background(b, g2)
    assert 0 <= p <= b
    assert hbt_g2(b, p) == pytest.approx(g2, rel=1e-9)


def test_calibration_zero_and_range():
    assert calibrate_background(0.7, 0.0) == 0.0
    with pytest.raises(ConfigError):
        calibrate_background(0.7, 0.6)


def test_simulated_g2_tracks_calibration():
    values = []
    for g2 in (0.02, 0.05):
        h = simulate_hbt(SourceParams(brightness_max=0.7, g2_zero=g2), 1_000_000, rng=5)
        got, err = g2_with_error(h)
        assert got == pytest.approx(g2, rel=0.05)
        values.append(got)
    # slope in p_bg is positive
    assert values[1] > values[0]
