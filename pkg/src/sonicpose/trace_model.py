"""Sensor and pose data types, synthetic trajectories, trace files and frames.

World frame is right-handed and z-up. Accelerometers report specific force,
so a level device at rest reads ``+G`` on its z axis.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import quat

G = 9.80665
GRAVITY = np.array([0.0, 0.0, -G])
GRAVITY_REACTION = -GRAVITY

DEFAULT_IMU_RATE = 200.0
DEFAULT_FIX_RATE = 20.0

IMU_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
POSE_HEADER = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]

CHANNELS = ("accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z")


class TraceFormatError(ValueError):
    """A trace file row could not be parsed."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class TraceValidationError(ValueError):
    """A trace violates an ordering or consistency invariant."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def channel_index(channel: str) -> tuple[str, int]:
    """Split ``"accel_x"`` into ``("accel", 0)``."""
    try:
        sensor, axis = channel.split("_")
        return sensor, "xyz".index(axis)
    except ValueError:
        raise ValueError(f"unknown channel {channel!r}; expected one of {CHANNELS}") from None


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]


@dataclass(frozen=True)
class Pose:
    t: float
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        vals = (self.t, *self.position, *self.orientation)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("pose components must be finite")
        n = math.sqrt(sum(c * c for c in self.orientation))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"pose quaternion norm {n!r} is not unit")


def _frozen(a, shape_tail):
    a = np.array(a, dtype=float)
    if a.size == 0:
        a = a.reshape((0,) + shape_tail)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImuSeries:
    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t, ()))
        object.__setattr__(self, "accel", _frozen(self.accel, (3,)))
        object.__setattr__(self, "gyro", _frozen(self.gyro, (3,)))
        n = len(self.t)
        if self.accel.shape != (n, 3) or self.gyro.shape != (n, 3):
            raise ValueError("imu arrays must have shapes (N,), (N,3), (N,3)")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(float(self.t[i]), tuple(self.accel[i].tolist()), tuple(self.gyro[i].tolist()))

    def __iter__(self) -> Iterator[ImuSample]:
        return (self[i] for i in range(len(self)))

    def channel(self, name: str) -> np.ndarray:
        sensor, axis = channel_index(name)
        return (self.accel if sensor == "accel" else self.gyro)[:, axis]

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuSeries":
        return cls([s.t for s in samples], [s.accel for s in samples], [s.gyro for s in samples])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped poses stored column-wise."""

    t: np.ndarray
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t, ()))
        object.__setattr__(self, "position", _frozen(self.position, (3,)))
        object.__setattr__(self, "orientation", _frozen(self.orientation, (4,)))
        n = len(self.t)
        if self.position.shape != (n, 3) or self.orientation.shape != (n, 4):
            raise ValueError("trajectory arrays must have shapes (N,), (N,3), (N,4)")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> Pose:
        return Pose(float(self.t[i]), tuple(self.position[i].tolist()), tuple(self.orientation[i].tolist()))

    def __iter__(self) -> Iterator[Pose]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_poses(cls, poses: Sequence[Pose]) -> "Trajectory":
        return cls([p.t for p in poses], [p.position for p in poses], [p.orientation for p in poses])

    @classmethod
    def empty(cls) -> "Trajectory":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))

    def at_times(self, times, tol) -> np.ndarray:
        """Index of the pose nearest each time, or -1 where none is within ``tol``."""
        times = np.asarray(times, dtype=float)
        if len(self.t) == 0:
            return np.full(times.shape, -1, dtype=int)
        j = np.clip(np.searchsorted(self.t, times), 1, max(len(self.t) - 1, 1))
        lo = np.clip(j - 1, 0, len(self.t) - 1)
        hi = np.clip(j, 0, len(self.t) - 1)
        pick = np.where(np.abs(self.t[lo] - times) <= np.abs(self.t[hi] - times), lo, hi)
        return np.where(np.abs(self.t[pick] - times) <= tol, pick, -1)


@dataclass(frozen=True, eq=False)
class Trace:
    imu: ImuSeries
    fixes: Trajectory
    ground_truth: Trajectory
    imu_rate: float = DEFAULT_IMU_RATE
    fix_rate: float = DEFAULT_FIX_RATE

    def __post_init__(self):
        if not (self.imu_rate > 0 and self.fix_rate > 0):
            raise ValueError("rates must be positive")
        if self.imu_rate < self.fix_rate:
            raise ValueError("imu_rate must be >= fix_rate")

    @property
    def duration(self) -> float:
        return float(self.imu.t[-1] - self.imu.t[0]) if len(self.imu) else 0.0

    def with_imu(self, accel=None, gyro=None) -> "Trace":
        imu = ImuSeries(
            self.imu.t,
            self.imu.accel if accel is None else accel,
            self.imu.gyro if gyro is None else gyro,
        )
        return Trace(imu, self.fixes, self.ground_truth, self.imu_rate, self.fix_rate)

    def equals(self, other: "Trace") -> bool:
        """Bit-exact equality of every numeric field."""
        pairs = [
            (self.imu.t, other.imu.t), (self.imu.accel, other.imu.accel), (self.imu.gyro, other.imu.gyro),
            (self.fixes.t, other.fixes.t), (self.fixes.position, other.fixes.position),
            (self.fixes.orientation, other.fixes.orientation),
            (self.ground_truth.t, other.ground_truth.t),
            (self.ground_truth.position, other.ground_truth.position),
            (self.ground_truth.orientation, other.ground_truth.orientation),
        ]
        return (
            self.imu_rate == other.imu_rate
            and self.fix_rate == other.fix_rate
            and all(a.shape == b.shape and np.array_equal(a.view(np.uint64), b.view(np.uint64)) for a, b in pairs)
        )

    def validate(self, strict_spacing: bool = True) -> None:
        """Raise :class:`TraceValidationError` if an invariant is violated."""
        t = self.imu.t
        if not (np.all(np.isfinite(self.imu.accel)) and np.all(np.isfinite(self.imu.gyro)) and np.all(np.isfinite(t))):
            raise TraceValidationError("non-finite imu component")
        bad = np.nonzero(np.diff(t) <= 0)[0]
        if bad.size:
            raise TraceValidationError("imu timestamps must strictly increase", line=int(bad[0]) + 3)
        if strict_spacing and len(t) > 1:
            period = 1.0 / self.imu_rate
            dev = np.abs(np.diff(t) - period)
            if np.any(dev > 1e-6 * period):
                i = int(np.argmax(dev))
                raise TraceValidationError(f"imu spacing deviates from 1/imu_rate by more than 1 ppm at sample {i + 1}")
        for name, traj in (("fixes", self.fixes), ("ground_truth", self.ground_truth)):
            if np.any(np.diff(traj.t) <= 0):
                raise TraceValidationError(f"{name} timestamps must strictly increase")
            norms = np.linalg.norm(traj.orientation, axis=1) if len(traj) else np.zeros(0)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise TraceValidationError(f"{name} quaternion is not unit norm")
        if len(self.fixes) and len(self.ground_truth):
            idx = self.ground_truth.at_times(self.fixes.t, tol=0.0)
            if np.any(idx < 0):
                raise TraceValidationError("every fix timestamp needs a ground-truth pose at the same time")


@dataclass(frozen=True)
class FrameTransform:
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.rotation))
        if abs(n - 1.0) > 1e-9:
            raise ValueError("transform rotation must be a unit quaternion")

    def inverse(self) -> "FrameTransform":
        qi = quat.conjugate(np.asarray(self.rotation))
        ti = -quat.rotate(qi, self.translation)
        return FrameTransform(tuple(qi.tolist()), tuple(ti.tolist()))

    def __matmul__(self, other: "FrameTransform") -> "FrameTransform":
        q = quat.multiply(self.rotation, other.rotation)
        t = quat.rotate(self.rotation, other.translation) + np.asarray(self.translation)
        return FrameTransform(tuple(quat.normalize(q).tolist()), tuple(t.tolist()))


def apply_transform(transform: FrameTransform, pose: Pose) -> Pose:
    """Rigid-body transform of ``pose`` into the target frame."""
    p = quat.rotate(transform.rotation, pose.position) + np.asarray(transform.translation)
    q = quat.normalize(quat.multiply(transform.rotation, pose.orientation))
    return Pose(pose.t, tuple(p.tolist()), tuple(q.tolist()))


# ---------------------------------------------------------------- generators


def _noise_stds(noise) -> np.ndarray:
    if noise is None:
        return np.zeros(6)
    arr = np.asarray(noise, dtype=float).ravel()
    if arr.size == 2:
        arr = np.repeat(arr, 3)
    if arr.size != 6 or np.any(arr < 0):
        raise ValueError("noise must be (accel_std, gyro_std) or six non-negative per-axis stds")
    return arr


def _timeline(t0: float, duration: float, imu_rate: float, fix_rate: float):
    if not duration > 0:
        raise ValueError("duration must be positive")
    if not (imu_rate > 0 and fix_rate > 0):
        raise ValueError("rates must be positive")
    ratio = imu_rate / fix_rate
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("imu_rate must be an integer multiple of fix_rate")
    n = int(math.floor(duration * imu_rate + 1e-9))
    k = np.arange(n + 1)
    t = t0 + k / imu_rate
    fix_idx = k[:: int(round(ratio))]
    return t, fix_idx


def _build_trace(t, pos, vel_fn, fix_idx, imu_rate, fix_rate, noise, seed) -> Trace:
    # interval-mean acceleration keeps the sampled specific force consistent
    # with left-rectangle strapdown integration
    dt = 1.0 / imu_rate
    v_now = vel_fn(t)
    v_next = vel_fn(t + dt)
    acc = (v_next - v_now) / dt
    accel = acc + GRAVITY_REACTION
    gyro = np.zeros_like(accel)
    stds = _noise_stds(noise)
    if np.any(stds > 0):
        rng = np.random.default_rng(seed)
        draws = rng.standard_normal((len(t), 6)) * stds
        accel = accel + draws[:, :3]
        gyro = gyro + draws[:, 3:]
    q = np.tile(quat.IDENTITY, (len(t), 1))
    gt = Trajectory(t, pos, q)
    fixes = Trajectory(t[fix_idx], pos[fix_idx], q[fix_idx])
    return Trace(ImuSeries(t, accel, gyro), fixes, gt, float(imu_rate), float(fix_rate))


def generate_walk_trace(
    length_m: float = 4.0,
    duration_s: float = 10.0,
    imu_rate: float = DEFAULT_IMU_RATE,
    fix_rate: float = DEFAULT_FIX_RATE,
    noise=None,
    seed=None,
    ramp_s: float = 1.0,
) -> Trace:
    """Straight walk along world +y with a trapezoidal speed profile.

    ``noise`` is either ``(accel_std, gyro_std)`` or six per-axis standard
    deviations; it is drawn from ``numpy.random.default_rng(seed)``.
    """
    if length_m < 0:
        raise ValueError("length_m must be non-negative")
    t, fix_idx = _timeline(0.0, duration_s, imu_rate, fix_rate)
    ramp = min(ramp_s, duration_s / 2.0)
    vmax = length_m / (duration_s - ramp)
    acc = vmax / ramp if ramp > 0 else 0.0
    T = duration_s

    def speed(tt):
        tt = np.asarray(tt, dtype=float)
        return np.select(
            [tt <= 0, tt < ramp, tt <= T - ramp, tt < T],
            [0.0, acc * tt, vmax, acc * (T - tt)],
            default=0.0,
        )

    def dist(tt):
        tt = np.asarray(tt, dtype=float)
        d1 = 0.5 * acc * ramp * ramp
        return np.select(
            [tt <= 0, tt < ramp, tt <= T - ramp, tt < T],
            [0.0, 0.5 * acc * tt * tt, d1 + vmax * (tt - ramp), length_m - 0.5 * acc * (T - tt) ** 2],
            default=length_m,
        )

    pos = np.zeros((len(t), 3))
    pos[:, 1] = dist(t)

    def vel(tt):
        v = np.zeros((len(tt), 3))
        v[:, 1] = speed(tt)
        return v

    return _build_trace(t, pos, vel, fix_idx, imu_rate, fix_rate, noise, seed)


def generate_stationary_trace(duration_s=10.0, imu_rate=DEFAULT_IMU_RATE, fix_rate=DEFAULT_FIX_RATE, noise=None, seed=None):
    return generate_walk_trace(0.0, duration_s, imu_rate, fix_rate, noise, seed)


def generate_window_trace(
    waypoints: Sequence[tuple[float, Sequence[float]]],
    imu_rate: float = DEFAULT_IMU_RATE,
    fix_rate: float = DEFAULT_FIX_RATE,
    noise=None,
    seed=None,
) -> Trace:
    """Clamped cubic spline through ``(t, position)`` waypoints, at rest at both ends."""
    if len(waypoints) < 2:
        raise ValueError("need at least two waypoints")
    wt = np.array([w[0] for w in waypoints], dtype=float)
    wp = np.array([w[1] for w in waypoints], dtype=float)
    if wp.shape[1:] != (3,):
        raise ValueError("waypoint positions must be 3-vectors")
    if np.any(np.diff(wt) <= 0):
        raise ValueError("waypoint timestamps must strictly increase")
    spline = CubicSpline(wt, wp, axis=0, bc_type="clamped")
    dspline = spline.derivative()
    t, fix_idx = _timeline(wt[0], wt[-1] - wt[0], imu_rate, fix_rate)
    t_end = wt[-1]

    def vel(tt):
        tt = np.asarray(tt, dtype=float)
        v = dspline(np.clip(tt, wt[0], t_end))
        v[(tt >= t_end) | (tt <= wt[0])] = 0.0
        return v

    pos = spline(t)
    pos[0] = wp[0]
    if abs(t[-1] - t_end) < 1e-12:
        pos[-1] = wp[-1]
    return _build_trace(t, pos, vel, fix_idx, imu_rate, fix_rate, noise, seed)


# ----------------------------------------------------------------------- I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, columns):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def save_trajectory(traj: Trajectory, path) -> None:
    cols = [traj.t, *traj.position.T, *traj.orientation.T]
    _write_rows(Path(path), POSE_HEADER, cols)


def save_trace(trace: Trace, path) -> Path:
    """Write ``imu.csv``, ``fixes.csv`` and ``gt.csv`` into directory ``path``."""
    d = Path(path)
    if d.suffix == ".csv":
        imu_path = d
        d = d.parent
    else:
        imu_path = d / "imu.csv"
    d.mkdir(parents=True, exist_ok=True)
    _write_rows(imu_path, IMU_HEADER, [trace.imu.t, *trace.imu.accel.T, *trace.imu.gyro.T])
    save_trajectory(trace.fixes, d / "fixes.csv")
    save_trajectory(trace.ground_truth, d / "gt.csv")
    return imu_path


def _read_numeric(path: Path, expected_header, ncols):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError(path, 1, "empty file")
        if expected_header is not None and [h.strip() for h in header] != expected_header:
            raise TraceFormatError(path, 1, f"expected header {','.join(expected_header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != ncols:
                raise TraceFormatError(path, lineno, f"expected {ncols} columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise TraceFormatError(path, lineno, f"non-numeric value in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise TraceFormatError(path, lineno, "non-finite value")
            rows.append((lineno, vals))
    return rows


def _check_monotone(path, rows):
    for (_, prev), (lineno, cur) in zip(rows, rows[1:]):
        if not cur[0] > prev[0]:
            raise TraceValidationError(f"{path}: timestamps must strictly increase", line=lineno)


def load_trajectory(path) -> Trajectory:
    rows = _read_numeric(Path(path), POSE_HEADER, 8)
    _check_monotone(path, rows)
    if not rows:
        return Trajectory.empty()
    a = np.array([r for _, r in rows])
    return Trajectory(a[:, 0], a[:, 1:4], a[:, 4:8])


def _rate(t: np.ndarray) -> float:
    if len(t) < 2:
        return 0.0
    return float(f"{1.0 / float(np.median(np.diff(t))):.9g}")


def _is_euroc(path: Path) -> bool:
    with open(path) as f:
        first = f.readline()
    return first.startswith("#") or "timestamp" in first.lower()


def load_trace(path, fix_rate: float | None = None) -> Trace:
    """Load a native trace directory/CSV or a EuRoC ``imu0/data.csv``."""
    p = Path(path)
    if p.is_dir():
        if (p / "imu.csv").exists():
            p = p / "imu.csv"
        elif (p / "mav0" / "imu0" / "data.csv").exists():
            return load_euroc(p / "mav0", fix_rate=fix_rate or DEFAULT_FIX_RATE)
        elif (p / "imu0" / "data.csv").exists():
            return load_euroc(p, fix_rate=fix_rate or DEFAULT_FIX_RATE)
        else:
            raise FileNotFoundError(f"no imu.csv or imu0/data.csv under {p}")
    if _is_euroc(p):
        return load_euroc_imu(p, fix_rate=fix_rate or DEFAULT_FIX_RATE)
    rows = _read_numeric(p, IMU_HEADER, 7)
    _check_monotone(p, rows)
    if not rows:
        raise TraceValidationError(f"{p}: no samples")
    a = np.array([r for _, r in rows])
    imu = ImuSeries(a[:, 0], a[:, 1:4], a[:, 4:7])
    fixes = load_trajectory(p.parent / "fixes.csv") if (p.parent / "fixes.csv").exists() else Trajectory.empty()
    gt = load_trajectory(p.parent / "gt.csv") if (p.parent / "gt.csv").exists() else Trajectory.empty()
    imu_rate = _rate(imu.t)
    fr = fix_rate or _rate(fixes.t) or DEFAULT_FIX_RATE
    return Trace(imu, fixes, gt, imu_rate, min(fr, imu_rate))


def load_euroc_imu(path, fix_rate: float = DEFAULT_FIX_RATE, origin_ns: int | None = None) -> Trace:
    """EuRoC ``data.csv``: ``timestamp[ns], w_x, w_y, w_z, a_x, a_y, a_z``.

    Times are seconds since ``origin_ns`` (default: the first sample), taken in
    integer nanoseconds first; absolute epoch seconds do not fit a double at
    sub-microsecond resolution.
    """
    p = Path(path)
    rows = []
    with open(p, newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 7:
                raise TraceFormatError(p, lineno, f"expected 7 columns, got {len(row)}")
            try:
                ns = int(row[0].strip())
                vals = [float(c) for c in row[1:]]
            except ValueError:
                raise TraceFormatError(p, lineno, f"non-numeric value in {row!r}") from None
            rows.append((lineno, vals, ns))
    for (_, _, prev), (lineno, _, cur) in zip(rows, rows[1:]):
        if cur <= prev:
            raise TraceValidationError(f"{p}: timestamps must strictly increase", line=lineno)
    if not rows:
        raise TraceValidationError(f"{p}: no samples")
    origin = rows[0][2] if origin_ns is None else origin_ns
    t = np.array([(ns - origin) * 1e-9 for _, _, ns in rows])
    a = np.array([r for _, r, _ in rows])
    imu = ImuSeries(t, a[:, 3:6], a[:, 0:3])
    imu_rate = _rate(imu.t)
    return Trace(imu, Trajectory.empty(), Trajectory.empty(), imu_rate, min(fix_rate, imu_rate))


def load_euroc(directory, fix_rate: float = DEFAULT_FIX_RATE) -> Trace:
    """EuRoC sequence folder with ``imu0/`` and optional ``state_groundtruth_estimate0/``.

    Fixes are the ground-truth poses nearest to each ``1/fix_rate`` tick.
    """
    d = Path(directory)
    trace = load_euroc_imu(d / "imu0" / "data.csv", fix_rate)
    with open(d / "imu0" / "data.csv", newline="") as f:
        origin = next(int(r[0]) for r in csv.reader(f) if r and not r[0].startswith("#") and r[0].strip().isdigit())
    gt_path = d / "state_groundtruth_estimate0" / "data.csv"
    if not gt_path.exists():
        return trace
    rows = []
    with open(gt_path, newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([(int(row[0]) - origin) * 1e-9] + [float(c) for c in row[1:8]])
            except (ValueError, IndexError):
                raise TraceFormatError(gt_path, lineno, "malformed ground-truth row") from None
    a = np.array(rows)
    q = a[:, 4:8] / np.linalg.norm(a[:, 4:8], axis=1, keepdims=True)
    gt = Trajectory(a[:, 0], a[:, 1:4], q)
    ticks = np.arange(gt.t[0], gt.t[-1], 1.0 / fix_rate)
    idx = np.unique(gt.at_times(ticks, tol=0.5 / fix_rate))
    idx = idx[idx >= 0]
    fixes = Trajectory(gt.t[idx], gt.position[idx], gt.orientation[idx])
    return Trace(trace.imu, fixes, gt, trace.imu_rate, trace.fix_rate)


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
