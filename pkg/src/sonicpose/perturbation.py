"""Digital-domain IMU perturbations, GMM fitting, and frequency-sweep analysis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import peak_prominences

from .acoustic_channel import SweepLog
from .trace_model import CHANNELS, G, Trace, channel_index, ensure_dir

STD_FLOOR = 1e-4
GYRO_LIMIT = 2.0

# ------------------------------------------------------------ constant bias


@dataclass(frozen=True)
class ConstantBias:
    sensor: str
    axis: str
    magnitude: float
    window: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        channel_index(f"{self.sensor}_{self.axis}")
        limit = G if self.sensor == "accel" else GYRO_LIMIT
        unit = "m/s^2" if self.sensor == "accel" else "rad/s"
        if not abs(self.magnitude) <= limit:
            raise ValueError(
                f"{self.sensor} bias {self.magnitude} {unit} is outside the perturbation clamp "
                f"[-{limit}, +{limit}] {unit}"
            )
        if not self.window[0] < self.window[1]:
            raise ValueError("bias window must satisfy t0 < t1")

    @property
    def channel(self) -> str:
        return f"{self.sensor}_{self.axis}"

    @classmethod
    def parse(cls, text: str) -> "ConstantBias":
        """Parse shorthand like ``accel_x_const_2.1`` or ``gyro_z_const_-1.5``."""
        parts = text.split("_")
        if len(parts) != 4 or parts[2] != "const":
            raise ValueError(f"cannot parse bias spec {text!r}; expected <sensor>_<axis>_const_<value>")
        return cls(parts[0], parts[1], float(parts[3]))


def _window_mask(trace: Trace, window, units: str = "seconds") -> np.ndarray:
    t = trace.imu.t
    t0, t1 = window
    if units == "fraction":
        if not 0.0 <= t0 < t1 <= 1.0:
            raise ValueError("fractional window must satisfy 0 <= start < end <= 1")
        span = t[-1] - t[0]
        t0, t1 = t[0] + t0 * span, t[0] + t1 * span
    elif units != "seconds":
        raise ValueError(f"unknown window units {units!r}")
    return (t >= t0) & (t < t1)


def _offset_channel(trace: Trace, channel: str, offsets: np.ndarray, mask: np.ndarray) -> Trace:
    sensor, axis = channel_index(channel)
    arr = np.array(trace.imu.accel if sensor == "accel" else trace.imu.gyro)
    arr[mask, axis] = arr[mask, axis] + offsets
    return trace.with_imu(accel=arr) if sensor == "accel" else trace.with_imu(gyro=arr)


def inject_constant(trace: Trace, bias: ConstantBias) -> Trace:
    """Add ``bias.magnitude`` to one axis inside the half-open bias window."""
    mask = _window_mask(trace, bias.window)
    if not mask.any():
        raise ValueError("bias window does not overlap the trace")
    if bias.magnitude == 0:
        return trace
    return _offset_channel(trace, bias.channel, np.full(int(mask.sum()), float(bias.magnitude)), mask)


# ---------------------------------------------------------------------- GMM


@dataclass(frozen=True)
class GmmModel:
    """One-dimensional Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    degenerate: bool = False
    log_likelihood: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, float).ravel()
        m = np.asarray(self.means, float).ravel()
        s = np.asarray(self.stds, float).ravel()
        if not (len(w) == len(m) == len(s) >= 1):
            raise ValueError("weights, means and stds must have the same non-zero length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(s < STD_FLOOR * (1 - 1e-12)) or not np.all(np.isfinite(m)):
            raise ValueError(f"stds must be >= {STD_FLOOR} and means finite")
        for name, arr in (("weights", w), ("means", m), ("stds", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.means)

    @property
    def std(self) -> float:
        second = float(self.weights @ (self.stds ** 2 + self.means ** 2))
        return math.sqrt(max(second - self.mean ** 2, 0.0))

    @classmethod
    def single(cls, mean: float, std: float) -> "GmmModel":
        return cls(np.ones(1), np.array([mean]), np.array([max(std, STD_FLOOR)]))

    def to_components(self) -> list[dict]:
        return [
            {"weight": float(w), "mean": float(m), "std": float(s)}
            for w, m, s in zip(self.weights, self.means, self.stds)
        ]

    @classmethod
    def from_components(cls, comps: Sequence[Mapping]) -> "GmmModel":
        if not comps:
            raise ValueError("GMM needs at least one component")
        for c in comps:
            extra = set(c) - {"weight", "mean", "std"}
            if extra:
                raise ValueError(f"unknown GMM component keys {sorted(extra)}")
        return cls(
            np.array([c["weight"] for c in comps], float),
            np.array([c["mean"] for c in comps], float),
            np.array([c["std"] for c in comps], float),
        )

    def log_likelihood_of(self, x) -> float:
        return float(_log_mix(np.asarray(x, float), self.weights, self.means, self.stds).sum())

    def bic(self, x) -> float:
        x = np.asarray(x, float)
        params = 3 * self.k - 1
        return params * math.log(len(x)) - 2.0 * self.log_likelihood_of(x)


def _log_mix(x, w, m, s):
    z = (x[:, None] - m[None, :]) / s[None, :]
    comp = np.log(w)[None, :] - 0.5 * z * z - np.log(s)[None, :] - 0.5 * math.log(2 * math.pi)
    top = comp.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(comp - top).sum(axis=1, keepdims=True))).ravel()


def _kmeans_pp(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            break
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers)


def fit_gmm(samples, k: int = 2, seed=None, tol: float = 1e-8, max_iter: int = 500) -> GmmModel:
    """EM fit from a k-means++ start.

    Stops when the mean per-sample log-likelihood improves by less than ``tol``
    or after ``max_iter`` iterations. The per-iteration history is kept in
    ``GmmModel.log_likelihood``.
    """
    x = np.asarray(samples, float).ravel()
    if k < 1:
        raise ValueError("K must be >= 1")
    if len(x) < 10 * k:
        raise ValueError(f"need at least {10 * k} samples to fit K={k}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if np.ptp(x) == 0:
        return GmmModel(np.ones(1), np.array([x[0]]), np.array([STD_FLOOR]), degenerate=k > 1)
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    k_eff = len(centers)
    label = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    w = np.empty(k_eff)
    m = np.empty(k_eff)
    s = np.empty(k_eff)
    for j in range(k_eff):
        sel = x[label == j]
        w[j] = max(len(sel), 1) / len(x)
        m[j] = sel.mean() if len(sel) else centers[j]
        s[j] = max(sel.std() if len(sel) > 1 else x.std(), STD_FLOOR)
    w /= w.sum()

    history = []
    prev = -math.inf
    for _ in range(max_iter):
        z = (x[:, None] - m[None, :]) / s[None, :]
        logp = np.log(w)[None, :] - 0.5 * z * z - np.log(s)[None, :] - 0.5 * math.log(2 * math.pi)
        top = logp.max(axis=1, keepdims=True)
        lse = top + np.log(np.exp(logp - top).sum(axis=1, keepdims=True))
        ll = float(lse.mean())
        history.append(ll)
        if ll - prev < tol:
            break
        prev = ll
        r = np.exp(logp - lse)
        nk = r.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        w = nk / len(x)
        m = (r * x[:, None]).sum(axis=0) / nk
        var = (r * (x[:, None] - m[None, :]) ** 2).sum(axis=0) / nk
        s = np.maximum(np.sqrt(var), STD_FLOOR)
    keep = w > 0
    w = w[keep] / w[keep].sum()
    order = np.argsort(m[keep], kind="stable")
    return GmmModel(w[order], m[keep][order], s[keep][order], log_likelihood=tuple(history))


def fit_gmm_bic(samples, ks: Sequence[int] = (1, 2, 3), seed=None) -> GmmModel:
    """Fit each K in ``ks`` and keep the lowest-BIC model."""
    x = np.asarray(samples, float).ravel()
    best = None
    for k in ks:
        if len(x) < 10 * k:
            continue
        model = fit_gmm(x, k, seed)
        score = model.bic(x)
        if best is None or score < best[0]:
            best = (score, model)
    if best is None:
        raise ValueError("too few samples for every candidate K")
    return best[1]


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_gmm(model: GmmModel, n: int, seed=None) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = _rng(seed)
    if n == 0:
        return np.zeros(0)
    comp = rng.choice(model.k, size=n, p=model.weights)
    return rng.normal(model.means[comp], model.stds[comp])


def inject_gmm(
    trace: Trace,
    model: GmmModel | Mapping[str, GmmModel],
    target,
    window,
    seed=None,
    units: str = "seconds",
) -> Trace:
    """Add an independent GMM draw to every in-window sample of each target channel.

    ``window`` is ``(start, end)`` in seconds or, with ``units="fraction"``, as
    fractions of the trace span; either way it is half-open.
    """
    targets = [target] if isinstance(target, str) else list(target)
    if not targets:
        raise ValueError("target set must not be empty")
    mask = _window_mask(trace, window, units)
    if not mask.any():
        raise ValueError("injection window holds no samples")
    rng = _rng(seed)
    out = trace
    for ch in targets:
        m = model[ch] if isinstance(model, Mapping) else model
        out = _offset_channel(out, ch, sample_gmm(m, int(mask.sum()), rng), mask)
    return out


def save_gmm(models: Mapping[str, GmmModel], path) -> None:
    doc = {ch: m.to_components() for ch, m in models.items()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_gmm(path) -> dict[str, GmmModel]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a mapping of channel to component list")
    out = {}
    for ch, comps in doc.items():
        channel_index(ch)
        out[ch] = GmmModel.from_components(comps)
    return out


# --------------------------------------------------------------- sweep stats

SWEEP_LOG_HEADER = ["frequency_hz", "t", "ax", "ay", "az", "gx", "gy", "gz"]
SWEEP_STATS_HEADER = ["frequency_hz", "sensor", "axis", "mean", "std"]
RESONANCE_HEADER = ["sensor", "axis", "frequency_hz"]


@dataclass
class SweepStats:
    """Per-step, per-channel mean and std; columns follow ``CHANNELS``."""

    frequency: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    flagged: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.frequency = np.asarray(self.frequency, float)
        self.mean = np.asarray(self.mean, float).reshape(len(self.frequency), len(CHANNELS))
        self.std = np.asarray(self.std, float).reshape(len(self.frequency), len(CHANNELS))
        if np.any(np.diff(self.frequency) <= 0):
            raise ValueError("sweep frequencies must strictly increase")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")


def analyze_sweep(log: SweepLog, guard_s: float = 0.5, min_samples: int = 100) -> SweepStats:
    """Reduce raw sweep logs to per-step statistics, dropping ``guard_s`` at each step edge.

    Steps holding fewer than ``min_samples`` raw samples are listed in
    ``flagged``; their statistics use whatever samples remain.
    """
    f = np.asarray(log.frequency, float)
    t = np.asarray(log.t, float)
    data = np.hstack([np.asarray(log.accel, float), np.asarray(log.gyro, float)])
    if len(f) == 0:
        raise ValueError("sweep log is empty")
    starts = np.concatenate([[0], np.nonzero(np.diff(f) != 0)[0] + 1])
    ends = np.concatenate([starts[1:], [len(f)]])
    freqs, means, stds, flagged = [], [], [], []
    for a, b in zip(starts, ends):
        ts = t[a:b]
        keep = (ts >= ts[0] + guard_s) & (ts <= ts[-1] - guard_s)
        if b - a < min_samples or keep.sum() < 2:
            flagged.append(float(f[a]))
        if keep.sum() < 2:
            keep = np.ones(b - a, bool)
        block = data[a:b][keep]
        freqs.append(float(f[a]))
        means.append(block.mean(axis=0))
        stds.append(block.std(axis=0))
    return SweepStats(np.array(freqs), np.array(means), np.array(stds), flagged)


def _local_maxima(y: np.ndarray) -> list[int]:
    """Interior local maxima; a plateau reports its lowest index."""
    peaks = []
    i = 1
    n = len(y)
    while i < n - 1:
        if y[i] > y[i - 1]:
            j = i
            while j + 1 < n and y[j + 1] == y[i]:
                j += 1
            if j + 1 < n and y[j + 1] < y[i]:
                peaks.append(i)
            i = j + 1
        else:
            i += 1
    return peaks


def detect_resonances(stats: SweepStats, prominence: float = 5.0) -> list[tuple[str, str, float]]:
    """Std-curve peaks whose prominence strictly exceeds ``prominence`` x median std.

    At most one peak is kept per contiguous run of steps above that threshold
    (the most prominent, ties to the lower frequency).
    """
    if len(stats.frequency) < 5:
        raise ValueError("need at least 5 frequency steps")
    found = []
    for c, name in enumerate(CHANNELS):
        y = stats.std[:, c]
        thr = prominence * float(np.median(y))
        cand = _local_maxima(y)
        if not cand:
            continue
        prom = peak_prominences(y, cand)[0]
        above = y > thr
        run_id = np.cumsum(np.concatenate([[1], (above[1:] & ~above[:-1]).astype(int)]))
        best: dict[int, tuple[float, int]] = {}
        for idx, p in zip(cand, prom):
            if not p > thr or not above[idx]:
                continue
            r = int(run_id[idx])
            if r not in best or p > best[r][0]:
                best[r] = (float(p), idx)
        sensor, axis = name.split("_")
        for _, idx in sorted(best.values(), key=lambda v: v[1]):
            found.append((sensor, axis, float(stats.frequency[idx])))
    return found


def save_sweep_log(log: SweepLog, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_LOG_HEADER)
        for row in zip(log.frequency, log.t, *np.asarray(log.accel).T, *np.asarray(log.gyro).T):
            w.writerow([repr(float(v)) for v in row])


def load_sweep_log(path) -> SweepLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SWEEP_LOG_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(SWEEP_LOG_HEADER)}")
        rows = []
        for line, row in enumerate(reader, start=2):
            try:
                if len(row) != 8:
                    raise ValueError
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{line}: malformed sweep row") from None
    arr = np.array(rows, float).reshape(-1, 8)
    return SweepLog(arr[:, 0], arr[:, 1], arr[:, 2:5], arr[:, 5:8])


def save_sweep_stats(stats: SweepStats, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_STATS_HEADER)
        for i, f in enumerate(stats.frequency):
            for c, name in enumerate(CHANNELS):
                sensor, axis = name.split("_")
                w.writerow([repr(float(f)), sensor, axis, repr(float(stats.mean[i, c])), repr(float(stats.std[i, c]))])


def save_resonances(peaks, path) -> None:
    ensure_dir(Path(path).parent)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESONANCE_HEADER)
        for sensor, axis, f in peaks:
            w.writerow([sensor, axis, repr(float(f))])
