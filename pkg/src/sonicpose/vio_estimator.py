"""Compact visual-inertial estimator: strapdown IMU propagation plus constant-gain fix fusion.

Between visual fixes the state is integrated from IMU samples. At each fix the
position innovation is checked against a gate; accepted fixes pull position,
velocity, attitude and (optionally) the accelerometer bias toward the fix.
``reject_count`` consecutive rejections declare tracking lost and hand over to
the recovery policy.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import kernels
from . import quat as Q
from .trace_model import (
    GRAVITY_REACTION,
    ImuSample,
    Pose,
    Trace,
    Trajectory,
    ensure_dir,
    save_trajectory,
)

EVENTS = ("fix_rejected", "tracking_lost", "pose_reset")


class RecoveryPolicy(str, enum.Enum):
    RESET_TO_ORIGIN = "reset_to_origin"
    CONTINUE_OPEN_LOOP = "continue_open_loop"


class Tracking(str, enum.Enum):
    NOMINAL = "nominal"
    LOST = "lost"


@dataclass(frozen=True)
class EstimatorConfig:
    """Gains and gates of the estimator.

    ``velocity_gain`` scales the velocity correction ``innovation / fix_interval``;
    without it the position-only loop has no damping term and diverges.
    ``reject_angle`` gates on the geodesic attitude innovation (radians).
    The ZUPT gate declares a sample stationary when, over the trailing
    ``zupt_window`` seconds, every accel reading stays within
    ``motion_threshold`` of the window mean and the visual fixes moved less
    than ``still_distance``.
    """

    fusion_gain: float = 0.1
    velocity_gain: float = 0.005
    bias_gain: float = 0.0
    reject_threshold: float = 2.5
    reject_count: int = 3
    reject_angle: float = 0.65
    recovery: RecoveryPolicy = RecoveryPolicy.RESET_TO_ORIGIN
    zupt: bool = True
    motion_threshold: float = 0.3
    still_distance: float = 0.02
    zupt_window: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "recovery", RecoveryPolicy(self.recovery))
        if not 0.0 < self.fusion_gain <= 1.0:
            raise ValueError("fusion_gain must lie in (0, 1]")
        if not 0.0 <= self.velocity_gain < 1.0:
            raise ValueError("velocity_gain must lie in [0, 1)")
        if not 0.0 <= self.bias_gain < 1.0:
            raise ValueError("bias_gain must lie in [0, 1)")
        if not self.reject_threshold > 0:
            raise ValueError("reject_threshold must be positive")
        if not self.reject_angle > 0:
            raise ValueError("reject_angle must be positive")
        if int(self.reject_count) != self.reject_count or self.reject_count < 1:
            raise ValueError("reject_count must be an integer >= 1")
        if not (self.motion_threshold > 0 and self.still_distance >= 0 and self.zupt_window > 0):
            raise ValueError("ZUPT thresholds must be positive")

    @classmethod
    def preset(cls, name: str, **overrides) -> "EstimatorConfig":
        try:
            base = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown estimator preset {name!r}; expected one of {sorted(PRESETS)}") from None
        return replace(base, **overrides)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


PRESETS = {
    # re-initializing tracker: loss leads to a pose reset at the origin
    "reset": EstimatorConfig(),
    # open-loop tracker with a tight gate: loss leads to IMU-only drift
    "open_loop": EstimatorConfig(reject_threshold=0.8, recovery=RecoveryPolicy.CONTINUE_OPEN_LOOP, zupt=False),
    # bias-estimating tracker; a transient attack leaves a stale bias estimate behind
    "bias_tracking": EstimatorConfig(
        fusion_gain=0.5,
        velocity_gain=0.05,
        bias_gain=0.02,
        reject_threshold=0.16,
        reject_angle=math.pi,
        recovery=RecoveryPolicy.CONTINUE_OPEN_LOOP,
        zupt=False,
    ),
}


@dataclass(frozen=True)
class EstimatorState:
    t: float
    position: np.ndarray
    velocity: np.ndarray
    orientation: np.ndarray
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tracking: Tracking = Tracking.NOMINAL
    consecutive_rejects: int = 0
    resets: int = 0

    @classmethod
    def at_pose(cls, pose: Pose) -> "EstimatorState":
        return cls(pose.t, np.array(pose.position, float), np.zeros(3), np.array(pose.orientation, float))

    @property
    def pose(self) -> Pose:
        return Pose(self.t, self.position, self.orientation)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.orientation, self.accel_bias, self.gyro_bias]).astype(float)

    def with_array(self, s: np.ndarray, t: float | None = None) -> "EstimatorState":
        return replace(
            self,
            t=self.t if t is None else t,
            position=s[0:3].copy(),
            velocity=s[3:6].copy(),
            orientation=s[6:10].copy(),
            accel_bias=s[10:13].copy(),
            gyro_bias=s[13:16].copy(),
        )


@dataclass(frozen=True)
class Event:
    t: float
    event: str


@dataclass
class EstimatorResult:
    trajectory: Trajectory
    events: list[Event]
    final_state: EstimatorState

    def event_times(self, name: str) -> list[float]:
        return [e.t for e in self.events if e.event == name]

    @property
    def loss_time(self) -> float | None:
        times = self.event_times("tracking_lost")
        return times[0] if times else None


def strapdown_step(state: EstimatorState, sample: ImuSample, dt: float) -> EstimatorState:
    """Integrate one IMU sample over ``dt`` seconds."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = state.to_array()
    accel = np.asarray(sample.accel, float).reshape(1, 3)
    gyro = np.asarray(sample.gyro, float).reshape(1, 3)
    out_p = np.empty((1, 3))
    out_q = np.empty((1, 4))
    bad = kernels.python_propagate(s, accel, gyro, np.array([dt]), np.zeros(1, np.uint8), out_p, out_q, 0, 1)
    if bad >= 0:
        return replace(state, t=state.t + dt, tracking=Tracking.LOST)
    return state.with_array(s, t=state.t + dt)


def _fuse_core(s: np.ndarray, fix_p, fix_q, cfg: EstimatorConfig, interval: float) -> bool:
    """Apply one fix to state array ``s`` in place; return whether it was accepted."""
    innov = np.asarray(fix_p, float) - s[0:3]
    q = s[6:10]
    if np.linalg.norm(innov) > cfg.reject_threshold or Q.angle_between(q, fix_q) > cfg.reject_angle:
        return False
    s[0:3] += cfg.fusion_gain * innov
    s[3:6] += cfg.velocity_gain * innov / interval
    if cfg.bias_gain > 0:
        s[10:13] -= cfg.bias_gain * Q.rotate_inverse(q, innov) / (interval * interval)
    s[6:10] = Q.slerp(q, fix_q, cfg.fusion_gain)
    return True


def _recover(s: np.ndarray, cfg: EstimatorConfig) -> None:
    if cfg.recovery is RecoveryPolicy.RESET_TO_ORIGIN:
        s[0:6] = 0.0
        s[6:10] = Q.IDENTITY


def fuse_fix(
    state: EstimatorState,
    fix: Pose,
    config: EstimatorConfig,
    fix_interval: float | None = None,
    events: list | None = None,
) -> EstimatorState:
    """Fuse one visual fix. Events, if a list is given, are appended as :class:`Event`."""
    if fix.t < state.t - 1e-12:
        raise ValueError(f"fix at t={fix.t} is behind the state time {state.t}")
    if state.tracking is Tracking.LOST:
        return state
    interval = fix_interval if fix_interval else 0.05
    log = events if events is not None else []
    s = state.to_array()
    if _fuse_core(s, fix.position, fix.orientation, config, interval):
        return replace(state.with_array(s), consecutive_rejects=0)
    rejects = state.consecutive_rejects + 1
    log.append(Event(fix.t, "fix_rejected"))
    if rejects < config.reject_count:
        return replace(state, consecutive_rejects=rejects)
    log.append(Event(fix.t, "tracking_lost"))
    if config.recovery is RecoveryPolicy.RESET_TO_ORIGIN:
        _recover(s, config)
        log.append(Event(fix.t, "pose_reset"))
        return replace(state.with_array(s), consecutive_rejects=0, resets=state.resets + 1)
    return replace(state, consecutive_rejects=rejects, tracking=Tracking.LOST)


def zupt_mask(trace: Trace, config: EstimatorConfig) -> np.ndarray:
    """Per-sample stationary flags from the trailing-window IMU and fix tests."""
    t = trace.imu.t
    n = len(t)
    mask = np.zeros(n, dtype=np.uint8)
    if not config.zupt or n == 0:
        return mask
    w = max(1, int(round(config.zupt_window * trace.imu_rate)))
    if n < w:
        return mask
    a = np.asarray(trace.imu.accel, float)
    # trailing windows of w samples ending at k
    win = np.lib.stride_tricks.sliding_window_view(a, w, axis=0)  # (n-w+1, 3, w)
    mean = win.mean(axis=2, keepdims=True)
    dev = np.sqrt(((win - mean) ** 2).sum(axis=1)).max(axis=1)
    imu_still = np.zeros(n, bool)
    imu_still[w - 1:] = dev < config.motion_threshold

    ft = trace.fixes.t
    fp = np.asarray(trace.fixes.position, float)
    vis_still = np.zeros(n, bool)
    if len(ft) >= 2:
        hi = np.searchsorted(ft, t, side="right")
        lo = np.searchsorted(ft, t - config.zupt_window, side="left")
        for k in np.nonzero(imu_still)[0]:
            if hi[k] - lo[k] >= 2:
                seg = fp[lo[k]:hi[k]]
                vis_still[k] = np.max(np.linalg.norm(seg - seg[-1], axis=1)) < config.still_distance
    mask[:] = imu_still & vis_still
    return mask


def run_estimator(
    trace: Trace,
    config: EstimatorConfig | None = None,
    initial: Pose | None = None,
    backend=None,
) -> EstimatorResult:
    """Run the estimator over a trace; output poses are at every IMU tick.

    A fix is fused at the first IMU tick at or after its timestamp, and the
    recorded pose at that tick is the post-fusion pose. The initial state is
    the first ground-truth pose (else the origin) at rest.
    """
    cfg = config or EstimatorConfig()
    propagate = backend or kernels.propagate
    t = np.asarray(trace.imu.t, float)
    n = len(t)
    if n == 0:
        raise ValueError("cannot run the estimator on an empty trace")
    if initial is None:
        initial = trace.ground_truth[0] if len(trace.ground_truth) else Pose(t[0], np.zeros(3), Q.IDENTITY)

    accel = np.ascontiguousarray(trace.imu.accel, dtype=float)
    gyro = np.ascontiguousarray(trace.imu.gyro, dtype=float)
    zupt = zupt_mask(trace, cfg)
    if zupt.any():
        accel = accel.copy()
        gyro = gyro.copy()
        accel[zupt.astype(bool)] = GRAVITY_REACTION
        gyro[zupt.astype(bool)] = 0.0
    dt = np.empty(n)
    dt[:-1] = np.diff(t)
    dt[-1] = 1.0 / trace.imu_rate

    pos = np.empty((n, 3))
    att = np.empty((n, 4))
    s = np.concatenate([initial.position, np.zeros(3), initial.orientation, np.zeros(6)]).astype(float)
    pos[0] = s[0:3]
    att[0] = s[6:10]
    out_p = pos[1:]
    out_q = att[1:]

    ft = np.asarray(trace.fixes.t, float)
    fpos = np.asarray(trace.fixes.position, float)
    fq = np.asarray(trace.fixes.orientation, float)
    ticks = np.searchsorted(t, ft - 1e-9, side="left")

    events: list[Event] = []
    rejects = 0
    resets = 0
    lost = False
    k = 0  # state currently at tick k
    last_fix_t = None
    nominal_interval = 1.0 / trace.fix_rate

    def advance(stop_tick):
        nonlocal k, lost
        if stop_tick > k:
            bad = propagate(s, accel, gyro, dt, zupt, out_p, out_q, k, stop_tick)
            if bad >= 0:
                events.append(Event(float(t[bad]), "tracking_lost"))
                lost = True
                pos[bad + 1:] = pos[bad]
                att[bad + 1:] = att[bad]
                k = n - 1
                return
            k = stop_tick

    for j in range(len(ft)):
        tick = int(ticks[j])
        if tick >= n or lost:
            break
        advance(tick)
        if lost:
            break
        interval = nominal_interval if last_fix_t is None else max(ft[j] - last_fix_t, 1e-9)
        last_fix_t = ft[j]
        if _fuse_core(s, fpos[j], fq[j], cfg, interval):
            rejects = 0
        else:
            rejects += 1
            events.append(Event(float(ft[j]), "fix_rejected"))
            if rejects >= cfg.reject_count:
                events.append(Event(float(ft[j]), "tracking_lost"))
                if cfg.recovery is RecoveryPolicy.RESET_TO_ORIGIN:
                    _recover(s, cfg)
                    events.append(Event(float(ft[j]), "pose_reset"))
                    resets += 1
                    rejects = 0
                else:
                    lost = True
        pos[tick] = s[0:3]
        att[tick] = s[6:10]
        if lost:
            break
    if k < n - 1:
        lost_before = lost
        lost = False
        advance(n - 1)
        lost = lost or lost_before

    traj = Trajectory(t.copy(), pos, att)
    final = EstimatorState(
        t=float(t[-1]),
        position=s[0:3].copy(),
        velocity=s[3:6].copy(),
        orientation=s[6:10].copy(),
        accel_bias=s[10:13].copy(),
        gyro_bias=s[13:16].copy(),
        tracking=Tracking.LOST if lost else Tracking.NOMINAL,
        consecutive_rejects=rejects,
        resets=resets,
    )
    return EstimatorResult(traj, events, final)


def save_events(events, path) -> None:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "event"])
        for e in events:
            w.writerow([repr(float(e.t)), e.event])


def load_events(path) -> list[Event]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t", "event"]:
        raise ValueError(f"{path}: expected header t,event")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 2 or row[1] not in EVENTS:
            raise ValueError(f"{path}:{i}: malformed event row")
        out.append(Event(float(row[0]), row[1]))
    return out


def save_result(result: EstimatorResult, directory, stem: str = "estimate") -> None:
    d = ensure_dir(directory)
    save_trajectory(result.trajectory, d / f"{stem}.csv")
    save_events(result.events, d / f"{stem}_events.csv")
