import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonicpose.acoustic_channel import (
    AcousticTone,
    AdcModel,
    Resonance,
    ResonanceProfile,
    apply_output_biasing,
    apply_output_control,
    coupling_gain,
    dc_alias_frequency,
    defended_sample_offset,
    sample_tone,
)

HL2 = ResonanceProfile.hololens2()


def test_gain_at_resonance_is_peak():
    assert coupling_gain(HL2, "accel", "x", 2650.0) == 1.0


def test_gain_ten_half_widths_away():
    for f in (2650.0 + 1000.0, 2650.0 - 1000.0):
        assert abs(coupling_gain(HL2, "accel", "x", f) - 1.0 / 101.0) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 2000.0), st.floats(0.0, 2000.0))
def test_gain_symmetric_and_monotone(d1, d2):
    g = lambda f: coupling_gain(HL2, "gyro", "z", f)  # noqa: E731
    assert g(17550.0 + d1) == pytest.approx(g(17550.0 - d1), rel=1e-12)
    if d1 < d2:
        assert g(17550.0 + d1) >= g(17550.0 + d2)
    assert 0.0 <= g(17550.0 + d1) <= 1.0


def test_unknown_axis_rejected():
    with pytest.raises(ValueError):
        coupling_gain(HL2, "accel", "w", 1000.0)
    with pytest.raises(ValueError):
        coupling_gain(HL2, "magnetometer", "x", 1000.0)


def test_dc_alias_constant():
    adc = AdcModel(1000.0)
    tone = AcousticTone(5000.0, 2.0, 0.0)
    vals = [sample_tone(tone, adc, 1.0, k / 1000.0) for k in range(100)]
    assert all(v == 2.0 for v in vals)


def test_dc_alias_quadrature_is_zero():
    adc = AdcModel(1000.0)
    tone = AcousticTone(5000.0, 2.0, math.pi / 2)
    vals = sample_tone(tone, adc, 1.0, np.arange(100) / 1000.0)
    assert np.max(np.abs(vals)) < 1e-12


def test_near_alias_traces_one_hertz_cosine():
    fs = 1000.0
    adc = AdcModel(fs)
    tone = AcousticTone(5 * fs + 1.0, 1.5, 0.3)
    k = np.arange(3000)
    t = k / fs
    got = sample_tone(tone, adc, 0.7, t)
    direct = np.array([0.7 * 1.5 * math.cos(2 * math.pi * (5 * fs + 1.0) * tk + 0.3) for tk in t])
    alias = 0.7 * 1.5 * np.cos(2 * np.pi * 1.0 * t + 0.3)
    assert np.max(np.abs(got - direct)) < 1e-9
    assert np.max(np.abs(got - alias)) < 1e-9


def test_outside_window_is_zero():
    tone = AcousticTone(200.0, 1.0, 0.0, (1.0, 2.0))
    assert sample_tone(tone, AdcModel(200.0), 1.0, 0.5) == 0.0
    assert sample_tone(tone, AdcModel(200.0), 1.0, 2.0) == 0.0


def test_tone_invariants():
    with pytest.raises(ValueError):
        AcousticTone(0.0, 1.0)
    with pytest.raises(ValueError):
        AcousticTone(100.0, -1.0)
    with pytest.raises(ValueError):
        AcousticTone(100.0, 1.0, 0.0, (2.0, 1.0))


def test_envelope_modulates_amplitude():
    tone = AcousticTone(200.0, 2.0, 0.0, envelope=((0.0, 0.0), (1.0, 1.0)))
    adc = AdcModel(200.0)
    assert sample_tone(tone, adc, 1.0, 0.5) == pytest.approx(1.0)
    assert sample_tone(tone, adc, 1.0, 1.0) == pytest.approx(2.0)


def _dc_tone_for(profile, channel, fs, amplitude, **kw):
    f = dc_alias_frequency(profile.axes[channel].center, fs)
    gain = profile.gain(channel, f)
    return AcousticTone(f, amplitude / gain, 0.0, **kw)


def test_biasing_shifts_stationary_trace(still):
    profile = ResonanceProfile.hololens2()
    tone = _dc_tone_for(profile, "accel_x", still.imu_rate, 6.2, window=(2.0, 5.0))
    out = apply_output_biasing(still, tone, profile, AdcModel(still.imu_rate), ["accel_x"])
    diff = out.imu.accel - still.imu.accel
    inside = (still.imu.t >= 2.0) & (still.imu.t < 5.0)
    assert np.allclose(diff[inside, 0], 6.2, atol=1e-12)
    assert np.all(diff[~inside] == 0) and np.all(diff[:, 1:] == 0)
    assert np.array_equal(out.imu.gyro, still.imu.gyro)
    assert out.fixes is still.fixes and out.ground_truth is still.ground_truth
    assert np.array_equal(out.imu.t, still.imu.t)


def test_window_outside_trace_is_identity(still):
    tone = AcousticTone(2600.0, 5.0, 0.0, (50.0, 60.0))
    out = apply_output_biasing(still, tone, HL2, AdcModel(200.0), "accel_x")
    assert out.equals(still)


def test_off_resonance_is_negligible(still):
    tone = AcousticTone(1e7, 1.0, 0.0)
    assert HL2.gain("accel_x", 1e7) < 1e-6
    out = apply_output_biasing(still, tone, HL2, AdcModel(200.0), "accel_x")
    assert np.max(np.abs(out.imu.accel - still.imu.accel)) < 1e-5


def test_empty_target_rejected(still):
    with pytest.raises(ValueError):
        apply_output_biasing(still, AcousticTone(2600.0, 1.0), HL2, AdcModel(200.0), [])


def test_saturation(still):
    tone = _dc_tone_for(HL2, "gyro_z", 200.0, 100.0)
    out = apply_output_biasing(still, tone, HL2, AdcModel(200.0), "gyro_z")
    assert np.max(out.imu.gyro[:, 2]) == 35.0


def test_output_control_zero_and_square(still):
    n = len(still.imu.t)
    assert apply_output_control(still, np.zeros(n), "accel_x").equals(still)
    square = np.where(np.arange(n) % 20 < 10, 1.0, -1.0)
    out = apply_output_control(still, square, "accel_y")
    assert np.array_equal(out.imu.accel[:, 1] - still.imu.accel[:, 1], square)


def test_output_control_matches_dc_biasing(still):
    n = len(still.imu.t)
    ctrl = apply_output_control(still, np.full(n, 2.0), "accel_x")
    profile = ResonanceProfile({**HL2.axes, "accel_x": Resonance(2600.0)})
    tone = AcousticTone(2600.0, 2.0, 0.0)
    bias = apply_output_biasing(still, tone, profile, AdcModel(200.0), "accel_x")
    assert np.array_equal(ctrl.imu.accel, bias.imu.accel)


def test_output_control_length_mismatch(still):
    with pytest.raises(ValueError):
        apply_output_control(still, np.zeros(5), "accel_x")


def test_superposition_of_disjoint_tones(still):
    adc = AdcModel(200.0)
    a = AcousticTone(2600.0, 3.0, 0.2, (1.0, 3.0))
    b = AcousticTone(2650.0, 2.0, 1.0, (4.0, 6.0))
    ab = apply_output_biasing(apply_output_biasing(still, a, HL2, adc, "accel_x"), b, HL2, adc, "accel_x")
    ba = apply_output_biasing(apply_output_biasing(still, b, HL2, adc, "accel_x"), a, HL2, adc, "accel_x")
    assert ab.equals(ba)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.sampled_from([100.0, 200.0, 400.0, 1000.0]), st.floats(0.0, 50.0), st.floats(-math.pi, math.pi))
def test_dc_alias_closed_form(n, fs, a1, phi):
    tone = AcousticTone(n * fs, a1, phi)
    vals = sample_tone(tone, AdcModel(fs), 1.0, np.arange(200) / fs)
    assert np.max(np.abs(vals - a1 * math.cos(phi))) <= 1e-9 * max(1.0, a1)


@pytest.mark.parametrize("n", [1, 3, 5, 13, 89])
def test_out_of_phase_cancels_odd_alias(n):
    fs = 200.0
    adc = AdcModel(fs, "out_of_phase")
    tone = AcousticTone(n * fs, 4.0, 0.0)
    single = sample_tone(tone, AdcModel(fs), 1.0, 0.0)
    assert single == pytest.approx(4.0)
    paired = defended_sample_offset(adc, tone, 1.0, np.arange(500))
    assert np.max(np.abs(paired)) <= 1e-9


def test_randomized_jitter_mean_is_zero():
    fs = 200.0
    f = 2600.0
    adc = AdcModel(fs, "randomized_jitter", max_jitter=1.0 / f)
    tone = AcousticTone(f, 1.0, 0.0)
    rng = np.random.default_rng(0)
    vals = defended_sample_offset(adc, tone, 1.0, np.arange(100_000), rng)
    sigma = vals.std() / math.sqrt(len(vals))
    assert abs(vals.mean()) < 3 * sigma + 1e-12


def test_defense_none_rejected():
    with pytest.raises(ValueError):
        defended_sample_offset(AdcModel(200.0), AcousticTone(2600.0, 1.0), 1.0, 0)


def test_jitter_needs_rng():
    with pytest.raises(ValueError):
        defended_sample_offset(AdcModel(200.0, "randomized_jitter", 1e-4), AcousticTone(2600.0, 1.0), 1.0, 0)


def test_adc_invariants():
    with pytest.raises(ValueError):
        AdcModel(0.0)
    with pytest.raises(ValueError):
        AdcModel(200.0, "shield")
    with pytest.raises(ValueError):
        AdcModel(200.0, accel_range=(1.0, -1.0))
