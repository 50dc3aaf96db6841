import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonicpose.acoustic_channel import AcousticTone, AdcModel, ResonanceProfile, SweepLog, sample_tone, synthesize_sweep
from sonicpose.perturbation import (
    STD_FLOOR,
    ConstantBias,
    GmmModel,
    SweepStats,
    analyze_sweep,
    detect_resonances,
    fit_gmm,
    fit_gmm_bic,
    inject_constant,
    inject_gmm,
    load_gmm,
    load_sweep_log,
    sample_gmm,
    save_gmm,
    save_sweep_log,
)
from sonicpose.trace_model import CHANNELS


def test_constant_bias_full_trace(walk):
    out = inject_constant(walk, ConstantBias("accel", "x", 2.1))
    d = out.imu.accel - walk.imu.accel
    assert np.allclose(d[:, 0], 2.1, atol=1e-12) and np.all(d[:, 1:] == 0)
    assert np.array_equal(out.imu.gyro, walk.imu.gyro)


def test_constant_bias_zero_is_identity(walk):
    assert inject_constant(walk, ConstantBias("gyro", "z", 0.0)).equals(walk)


@pytest.mark.parametrize("sensor,m", [("accel", 10.5), ("accel", -9.9), ("gyro", 2.01)])
def test_constant_bias_clamp(sensor, m):
    with pytest.raises(ValueError, match="clamp"):
        ConstantBias(sensor, "x", m)


def test_constant_bias_parse():
    b = ConstantBias.parse("accel_x_const_2.1")
    assert (b.sensor, b.axis, b.magnitude) == ("accel", "x", 2.1)


def test_bias_window_locality(walk):
    out = inject_constant(walk, ConstantBias("accel", "y", 1.0, (3.0, 4.0)))
    inside = (walk.imu.t >= 3.0) & (walk.imu.t < 4.0)
    assert np.array_equal(out.imu.accel[~inside], walk.imu.accel[~inside])
    assert np.allclose(out.imu.accel[inside, 1] - walk.imu.accel[inside, 1], 1.0)


def test_fit_point_mass():
    m = fit_gmm(np.full(10_000, 3.0), 1, seed=0)
    assert m.k == 1 and abs(m.means[0] - 3.0) < 1e-6 and m.stds[0] == STD_FLOOR
    d = fit_gmm(np.full(10_000, 3.0), 2, seed=0)
    assert d.k == 1 and d.degenerate


def _mixture(seed, n=10_000):
    rng = np.random.default_rng(seed)
    pick = rng.random(n) < 0.5
    return np.where(pick, rng.normal(0.0, 0.1, n), rng.normal(3.0, 0.1, n))


def test_fit_two_components():
    m = fit_gmm(_mixture(7), 2, seed=7)
    assert np.allclose(m.means, [0.0, 3.0], atol=0.05)
    assert np.allclose(m.weights, [0.5, 0.5], atol=0.05)
    assert np.all(np.diff(m.log_likelihood) >= -1e-12)


def test_fit_is_seed_deterministic():
    x = _mixture(1)
    a, b = fit_gmm(x, 3, seed=5), fit_gmm(x, 3, seed=5)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.stds, b.stds)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_em_monotone(seed, k):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(rng.uniform(-5, 5), rng.uniform(0.05, 2), 300) for _ in range(3)])
    m = fit_gmm(x, k, seed=seed)
    assert np.all(np.diff(m.log_likelihood) >= -1e-12)
    assert abs(m.weights.sum() - 1.0) < 1e-9 and np.all(m.stds >= STD_FLOOR)


def test_fit_std_matches_near_alias_channel_samples():
    fs = 200.0
    tone = AcousticTone(13 * fs + 3.7, 2.0, 0.4)
    t = np.arange(20_000) / fs
    x = sample_tone(tone, AdcModel(fs), 0.9, t) + np.random.default_rng(0).normal(0, 0.02, len(t))
    m = fit_gmm(x, 2, seed=0)
    assert abs(m.std - x.std()) <= 0.1 * x.std()


def test_fit_sample_refit_fixed_point():
    m0 = GmmModel(np.array([0.3, 0.7]), np.array([-1.0, 2.0]), np.array([0.2, 0.5]))
    x = sample_gmm(m0, 100_000, seed=11)
    m1 = fit_gmm(x, 2, seed=11)
    se = m0.stds / np.sqrt(m0.weights * len(x))
    assert np.all(np.abs(m1.means - m0.means) <= 3 * se)


def test_bic_picks_two_for_bimodal():
    assert fit_gmm_bic(_mixture(2), seed=0).k == 2


def test_sample_gmm_moments_and_determinism():
    m = GmmModel.single(6.1, 0.1)
    x = sample_gmm(m, 100_000, seed=3)
    assert abs(x.mean() - 6.1) < 0.01 and abs(x.std() - 0.1) < 0.01
    assert np.array_equal(x, sample_gmm(m, 100_000, seed=3))
    assert len(sample_gmm(m, 0, seed=3)) == 0


def test_gmm_invariants():
    with pytest.raises(ValueError):
        GmmModel(np.array([0.5, 0.6]), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        GmmModel(np.array([1.0]), np.zeros(1), np.array([1e-6]))


def test_inject_gmm_fraction_window(walk):
    out = inject_gmm(walk, GmmModel.single(6.1, 0.1), "accel_x", (0.3, 0.4), seed=1, units="fraction")
    changed = np.any(out.imu.accel != walk.imu.accel, axis=1)
    t = walk.imu.t
    assert np.array_equal(changed, (t >= 3.0) & (t < 4.0))
    d = (out.imu.accel - walk.imu.accel)[changed, 0]
    assert abs(d.mean() - 6.1) < 0.05


def test_inject_gmm_point_mass_at_zero(walk):
    out = inject_gmm(walk, GmmModel.single(0.0, 0.0), "accel_x", (0.0, 10.0), seed=1)
    assert np.max(np.abs(out.imu.accel - walk.imu.accel)) <= 1e-3


def test_inject_gmm_empty_window(walk):
    with pytest.raises(ValueError):
        inject_gmm(walk, GmmModel.single(1.0, 0.1), "accel_x", (20.0, 30.0), seed=1)


def test_gmm_serialization(tmp_path):
    m = GmmModel(np.array([0.25, 0.75]), np.array([0.0, 6.1]), np.array([0.1, 0.2]))
    save_gmm({"accel_x": m}, tmp_path / "g.json")
    back = load_gmm(tmp_path / "g.json")["accel_x"]
    assert np.array_equal(back.means, m.means) and np.array_equal(back.weights, m.weights)


def test_sweep_detects_hololens_peaks():
    stats = analyze_sweep(synthesize_sweep(ResonanceProfile.hololens2(), seed=0))
    peaks = detect_resonances(stats, 5.0)
    want = {("accel", "x"): 2650, ("accel", "y"): 2050, ("accel", "z"): 2050,
            ("gyro", "x"): 17700, ("gyro", "y"): 17700, ("gyro", "z"): 17550}
    assert len(peaks) == 6
    for sensor, axis, f in peaks:
        assert abs(f - want[(sensor, axis)]) <= 50
    i = int(np.argmax(stats.std[:, 0]))
    assert stats.frequency[i] == 2650.0


def test_sweep_flat_profile_has_no_peaks():
    assert detect_resonances(analyze_sweep(synthesize_sweep(ResonanceProfile.flat(), seed=0))) == []


def test_silence_std_is_noise_floor():
    stats = analyze_sweep(synthesize_sweep(ResonanceProfile.flat(), np.arange(2000.0, 3000.0, 50.0), seed=2))
    assert np.allclose(stats.std[:, :3], 0.02, rtol=0.2)
    assert np.allclose(stats.std[:, 3:], 0.002, rtol=0.2)


def test_constructed_constant_step():
    log = synthesize_sweep(ResonanceProfile.flat(), np.arange(2000.0, 2500.0, 50.0), seed=3)
    acc = np.array(log.accel)
    acc[log.frequency == 2200.0, 0] += 1.5
    stats = analyze_sweep(SweepLog(log.frequency, log.t, acc, log.gyro))
    i = list(stats.frequency).index(2200.0)
    neighbours = np.delete(stats.mean[:, 0], i)
    sigma = 0.02 / math.sqrt(200)
    assert abs(stats.mean[i, 0] - neighbours.mean() - 1.5) < 3 * sigma + 3 * sigma


def test_short_step_is_flagged():
    f = np.repeat([1000.0, 1050.0, 1100.0], [400, 50, 400])
    t = np.concatenate([np.arange(400) / 200, 2 + np.arange(50) / 200, 4 + np.arange(400) / 200])
    z = np.zeros((len(f), 3))
    stats = analyze_sweep(SweepLog(f, t, z, z))
    assert stats.flagged == [1050.0]


def _stats(curve):
    n = len(curve)
    std = np.tile(np.asarray(curve, float)[:, None], (1, len(CHANNELS)))
    return SweepStats(np.arange(n) * 50.0 + 2000.0, np.zeros((n, 6)), std)


def test_prominence_threshold_is_strict():
    base = [1.0] * 11
    at = list(base)
    at[5] = 1.0 + 5.0  # prominence 5 == 5 x median
    assert detect_resonances(_stats(at), 5.0) == []
    above = list(base)
    above[5] = 1.0 + 5.0001
    assert len(detect_resonances(_stats(above), 5.0)) == 6


def test_one_peak_per_run_and_ties_low():
    curve = [1, 1, 1, 20, 30, 20, 30, 20, 1, 1, 1]
    peaks = detect_resonances(_stats(curve), 5.0)
    assert {f for *_, f in peaks} == {2000.0 + 4 * 50}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=5, max_size=40), st.floats(0.01, 1000.0))
def test_detection_scale_invariant(curve, scale):
    a = detect_resonances(_stats(curve), 3.0)
    b = detect_resonances(_stats([c * scale for c in curve]), 3.0)
    assert a == b


def test_sweep_log_round_trip(tmp_path):
    log = synthesize_sweep(ResonanceProfile.hololens2(), np.arange(2000.0, 2300.0, 50.0), dwell_s=1.0, seed=0)
    save_sweep_log(log, tmp_path / "s.csv")
    back = load_sweep_log(tmp_path / "s.csv")
    assert np.array_equal(back.accel, log.accel) and np.array_equal(back.frequency, log.frequency)
