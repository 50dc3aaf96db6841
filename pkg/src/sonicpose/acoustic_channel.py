"""Acoustic injection path from a speaker tone to digitized IMU samples.

A tone ``A1 cos(2 pi F_a t + phi)`` couples into each sensor axis through a
Lorentzian resonance gain and is then sampled by the ADC. When ``F_a`` is an
integer multiple of the sample rate every sample sees the same phase, so the
tone shows up as a constant offset ``gain * A1 * cos(phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .trace_model import CHANNELS, Trace, channel_index

TWO_PI = 2.0 * math.pi

DEFENSES = ("none", "randomized_jitter", "out_of_phase")

# reported resonant frequencies of the HoloLens 2 IMU, Hz
HOLOLENS2_CENTERS = {
    "accel_x": 2650.0,
    "accel_y": 2050.0,
    "accel_z": 2050.0,
    "gyro_x": 17700.0,
    "gyro_y": 17700.0,
    "gyro_z": 17550.0,
}


@dataclass(frozen=True)
class AcousticTone:
    """A speaker tone as seen by one sensor axis at unity coupling.

    ``envelope`` is an optional sequence of ``(t, multiplier)`` points; the
    amplitude at time ``t`` is ``amplitude * interp(t)`` (amplitude modulation).
    """

    frequency: float
    amplitude: float
    phase: float = 0.0
    window: tuple[float, float] = (0.0, math.inf)
    envelope: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError("tone frequency must be positive")
        if self.amplitude < 0:
            raise ValueError("tone amplitude must be non-negative")
        if not self.window[0] < self.window[1]:
            raise ValueError("tone window must satisfy t_start < t_end")
        if self.envelope is not None:
            env = tuple((float(t), float(a)) for t, a in self.envelope)
            if len(env) < 1 or any(b[0] <= a[0] for a, b in zip(env, env[1:])):
                raise ValueError("envelope times must strictly increase")
            object.__setattr__(self, "envelope", env)

    def scaled(self, volume_ratio: float) -> "AcousticTone":
        """Same tone at ``volume_ratio`` of this amplitude (linear volume scaling)."""
        if volume_ratio < 0:
            raise ValueError("volume ratio must be non-negative")
        return replace(self, amplitude=self.amplitude * volume_ratio)

    def in_window(self, t):
        t = np.asarray(t, dtype=float)
        return (t >= self.window[0]) & (t < self.window[1])

    def amplitude_at(self, t):
        t = np.asarray(t, dtype=float)
        if self.envelope is None:
            return np.full(t.shape, self.amplitude)
        et, ea = zip(*self.envelope)
        return self.amplitude * np.interp(t, et, ea)


@dataclass(frozen=True)
class Resonance:
    center: float
    half_width: float = 100.0
    peak: float = 1.0

    def __post_init__(self):
        if not (self.center > 0 and self.half_width > 0):
            raise ValueError("resonance center and half-width must be positive")
        if not 0.0 <= self.peak <= 1.0:
            raise ValueError("peak coupling must lie in [0, 1]")


@dataclass(frozen=True)
class ResonanceProfile:
    """Per-axis resonant susceptibility of an accelerometer and gyroscope."""

    axes: Mapping[str, Resonance]

    def __post_init__(self):
        missing = set(CHANNELS) - set(self.axes)
        if missing:
            raise ValueError(f"resonance profile lacks channels {sorted(missing)}")

    @classmethod
    def hololens2(cls, half_width: float = 100.0, peak: float = 1.0) -> "ResonanceProfile":
        return cls({ch: Resonance(f, half_width, peak) for ch, f in HOLOLENS2_CENTERS.items()})

    @classmethod
    def flat(cls) -> "ResonanceProfile":
        """No usable resonance (a headset whose sweep shows no spikes)."""
        return cls({ch: Resonance(f, 100.0, 0.0) for ch, f in HOLOLENS2_CENTERS.items()})

    def gain(self, channel: str, f: float) -> float:
        sensor, axis = channel_index(channel)
        return coupling_gain(self, sensor, axis, f)


@dataclass(frozen=True)
class AdcModel:
    sample_rate: float = 200.0
    defense: str = "none"
    max_jitter: float = 0.0
    accel_range: tuple[float, float] = (-78.4, 78.4)
    gyro_range: tuple[float, float] = (-35.0, 35.0)

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("ADC sample rate must be positive")
        if self.defense not in DEFENSES:
            raise ValueError(f"unknown defense {self.defense!r}; expected one of {DEFENSES}")
        if self.max_jitter < 0:
            raise ValueError("max_jitter must be non-negative")
        for lo, hi in (self.accel_range, self.gyro_range):
            if not lo < hi:
                raise ValueError("saturation range must satisfy min < max")

    def clip_range(self, sensor: str) -> tuple[float, float]:
        return self.accel_range if sensor == "accel" else self.gyro_range


def coupling_gain(profile: ResonanceProfile, sensor: str, axis, f: float) -> float:
    """Lorentzian coupling ``peak * hw^2 / ((f - center)^2 + hw^2)``."""
    if sensor not in ("accel", "gyro"):
        raise ValueError(f"unknown sensor {sensor!r}")
    if isinstance(axis, str):
        if axis not in ("x", "y", "z"):
            raise ValueError(f"unknown axis {axis!r}")
        name = f"{sensor}_{axis}"
    elif axis in (0, 1, 2):
        name = f"{sensor}_{'xyz'[axis]}"
    else:
        raise ValueError(f"unknown axis {axis!r}")
    if not f > 0:
        raise ValueError("frequency must be positive")
    r = profile.axes[name]
    hw2 = r.half_width * r.half_width
    d = f - r.center
    return r.peak * hw2 / (d * d + hw2)


def _cycles(frequency: float, t, rate: float | None):
    """``F_a t`` reduced mod 1, split on the sample grid when the ADC rate is known.

    With ``t = k / rate + dt`` and ``F_a / rate = n + r`` the whole cycles ``n k``
    drop out, so an exact multiple (``r`` within a few ulps of zero) gives a
    phase free of rounding growth in ``k``.
    """
    if rate is None:
        cycles = frequency * t
        return cycles - np.round(cycles)
    k = np.round(t * rate)
    dt = t - k / rate
    ratio = frequency / rate
    n = np.round(ratio)
    resid = ratio - n
    if abs(resid) <= 4.0 * np.finfo(float).eps * max(abs(ratio), 1.0):
        resid = 0.0
    cycles = resid * k + frequency * dt
    return cycles - np.round(cycles)


def _raw_offset(tone: AcousticTone, gain: float, t, rate: float | None = None):
    """``gain * A1(t) * cos(2 pi F_a t + phi)`` with the cycle count reduced mod 1."""
    t = np.asarray(t, dtype=float)
    frac = _cycles(tone.frequency, t, rate)
    return gain * tone.amplitude_at(t) * np.cos(TWO_PI * frac + tone.phase)


def sample_tone(tone: AcousticTone, adc: AdcModel, gain: float, t_k, rng=None):
    """Additive tone term at sample instant(s) ``t_k``; zero outside the tone window.

    With a defended ADC the instants are perturbed as in
    :func:`defended_sample_offset`.
    """
    t_k = np.asarray(t_k, dtype=float)
    inside = tone.in_window(t_k)
    if adc.defense == "none":
        val = _raw_offset(tone, gain, t_k, adc.sample_rate)
    else:
        val = _defended(adc, tone, gain, t_k, rng)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def _defended(adc, tone, gain, t_k, rng):
    if adc.defense == "out_of_phase":
        half = 0.5 / adc.sample_rate
        fs = adc.sample_rate
        return 0.5 * (_raw_offset(tone, gain, t_k, fs) + _raw_offset(tone, gain, t_k + half, fs))
    if rng is None:
        raise ValueError("randomized_jitter sampling needs an explicit rng")
    u = rng.uniform(0.0, adc.max_jitter, size=np.shape(t_k))
    return _raw_offset(tone, gain, t_k + u, adc.sample_rate)


def defended_sample_offset(adc: AdcModel, tone: AcousticTone, gain: float, k, rng=None):
    """Tone offset seen by a defended ADC at sample index ``k``.

    ``out_of_phase`` averages the samples at ``t_k`` and ``t_k + 1/(2 F_samp)``;
    for ``F_a = N F_samp`` with odd ``N`` the pair cancels. ``randomized_jitter``
    samples at ``t_k + u`` with ``u ~ Uniform(0, max_jitter)`` drawn from ``rng``.
    """
    if adc.defense == "none":
        raise ValueError("defended_sample_offset needs an ADC with a defense")
    t_k = np.asarray(k, dtype=float) / adc.sample_rate
    out = _defended(adc, tone, gain, t_k, rng)
    return float(out) if np.ndim(out) == 0 else out


def dc_alias_frequency(resonance: float, sample_rate: float) -> float:
    """The integer multiple of ``sample_rate`` nearest ``resonance`` (at least 1x)."""
    n = max(1, int(round(resonance / sample_rate)))
    return n * sample_rate


def _targets(target) -> list[str]:
    if isinstance(target, str):
        target = [target]
    names = list(dict.fromkeys(target))
    if not names:
        raise ValueError("target set must not be empty")
    for n in names:
        channel_index(n)
    return names


def _apply_offsets(trace: Trace, offsets: Mapping[str, np.ndarray], adc: AdcModel | None) -> Trace:
    accel = np.array(trace.imu.accel)
    gyro = np.array(trace.imu.gyro)
    for name, off in offsets.items():
        sensor, axis = channel_index(name)
        arr = accel if sensor == "accel" else gyro
        col = arr[:, axis] + off
        lo, hi = (adc or AdcModel()).clip_range(sensor)
        touched = off != 0
        arr[:, axis] = np.where(touched, np.clip(col, lo, hi), arr[:, axis])
    return trace.with_imu(accel, gyro)


def apply_output_biasing(
    trace: Trace,
    tone: AcousticTone,
    profile: ResonanceProfile,
    adc: AdcModel,
    target: Iterable[str] | str,
    rng=None,
) -> Trace:
    """Add the sampled tone to each targeted axis inside the tone window, then saturate.

    Untargeted axes, timestamps, fixes and ground truth are left untouched.
    """
    names = _targets(target)
    t = trace.imu.t
    inside = tone.in_window(t)
    offsets = {}
    for name in names:
        gain = profile.gain(name, tone.frequency)
        off = np.zeros(len(t))
        if np.any(inside):
            if adc.defense == "none":
                off[inside] = _raw_offset(tone, gain, t[inside], adc.sample_rate)
            else:
                off[inside] = _defended(adc, tone, gain, t[inside], rng)
        offsets[name] = off
    return _apply_offsets(trace, offsets, adc)


def apply_output_control(
    trace: Trace,
    waveform: Sequence[float],
    target: Iterable[str] | str,
    window: tuple[float, float] = (0.0, math.inf),
    adc: AdcModel | None = None,
) -> Trace:
    """Offset targeted axes by exactly ``waveform`` over the in-window samples."""
    names = _targets(target)
    t = trace.imu.t
    inside = (t >= window[0]) & (t < window[1])
    wave = np.asarray(waveform, dtype=float)
    if wave.shape != (int(inside.sum()),):
        raise ValueError(f"waveform has {wave.size} samples, window holds {int(inside.sum())}")
    offsets = {}
    for name in names:
        off = np.zeros(len(t))
        off[inside] = wave
        offsets[name] = off
    return _apply_offsets(trace, offsets, adc)


# ------------------------------------------------------------ sweep synthesis


@dataclass
class SweepLog:
    """Raw per-step IMU logs from a stepped-frequency sweep."""

    frequency: np.ndarray
    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def __len__(self):
        return len(self.t)


def synthesize_sweep(
    profile: ResonanceProfile,
    frequencies: Sequence[float] | None = None,
    dwell_s: float = 2.0,
    sample_rate: float = 200.0,
    accel_amplitude: float = 3.0,
    gyro_amplitude: float = 1.0,
    noise=(0.02, 0.002),
    clock_error: float = 0.005,
    seed=None,
) -> SweepLog:
    """Stationary-device logs while a tone steps through ``frequencies``.

    Each step plays a fresh random-phase tone for ``dwell_s`` seconds. The ADC
    clock runs ``clock_error`` (fractional) fast relative to the host
    timestamps, as real MEMS oscillators do, so sweep steps rarely land on an
    exact DC alias.
    """
    if frequencies is None:
        frequencies = np.arange(2000.0, 30000.0 + 1e-9, 50.0)
    freqs = np.asarray(frequencies, dtype=float)
    rng = np.random.default_rng(seed)
    n = int(round(dwell_s * sample_rate))
    k = np.arange(n)
    true_rate = sample_rate * (1.0 + clock_error)
    a_std, g_std = noise
    f_col, t_col, acc_rows, gyr_rows = [], [], [], []
    for i, f in enumerate(freqs):
        t_host = i * dwell_s + k / sample_rate
        t_adc = t_host * (sample_rate / true_rate)
        phase = rng.uniform(0.0, TWO_PI)
        acc = np.tile([0.0, 0.0, 9.80665], (n, 1)) + rng.normal(0.0, a_std, (n, 3))
        gyr = rng.normal(0.0, g_std, (n, 3))
        for axis, ax in enumerate("xyz"):
            for sensor, arr, amp in (("accel", acc, accel_amplitude), ("gyro", gyr, gyro_amplitude)):
                gain = coupling_gain(profile, sensor, ax, f)
                if gain > 0:
                    tone = AcousticTone(f, amp, phase)
                    arr[:, axis] += _raw_offset(tone, gain, t_adc)
        f_col.append(np.full(n, f))
        t_col.append(t_host)
        acc_rows.append(acc)
        gyr_rows.append(gyr)
    return SweepLog(np.concatenate(f_col), np.concatenate(t_col), np.vstack(acc_rows), np.vstack(gyr_rows))
