"""Trajectory metrics, outcome classification, ASR aggregation and scene-level effects."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import quat as Q
from .trace_model import Trajectory, ensure_dir

OUTCOME_HEADER = ["trial", "regime", "ate_rmse", "final_offset", "loss_time", "resets"]
DEFAULT_FOV = (math.radians(43.0), math.radians(29.0))


class Regime(str, enum.Enum):
    NONE = "none"
    MISLEADING = "misleading"
    SNAPBACK = "snapback"
    DRIFT_AWAY = "drift_away"


@dataclass(frozen=True)
class AttackOutcome:
    regime: Regime
    ate_rmse: float
    final_offset: float
    loss_time: float | None = None
    reset_times: tuple[float, ...] = ()
    mean_translation_before_reset: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        if self.regime is Regime.SNAPBACK and not self.reset_times:
            raise ValueError("a snapback outcome needs at least one reset time")
        if self.regime is Regime.DRIFT_AWAY and self.loss_time is None:
            raise ValueError("a drift-away outcome needs a loss time")


def _match(estimated: Trajectory, ground_truth: Trajectory, tol: float):
    idx = ground_truth.at_times(estimated.t, tol)
    ok = idx >= 0
    return np.asarray(estimated.position)[ok], np.asarray(ground_truth.position)[idx[ok]]


def ate_rmse(estimated: Trajectory, ground_truth: Trajectory, tol: float | None = None) -> float:
    """RMS position error over timestamps matched within ``tol`` (no alignment)."""
    if tol is None:
        tol = 1e-6
    est, gt = _match(estimated, ground_truth, tol)
    if len(est) < 2:
        raise ValueError("need at least two matched samples")
    return float(np.sqrt(np.mean(np.sum((est - gt) ** 2, axis=1))))


def _event_list(events) -> list[tuple[float, str]]:
    out = []
    for e in events:
        if hasattr(e, "event"):
            out.append((float(e.t), e.event))
        else:
            out.append((float(e[0]), str(e[1])))
    return out


def classify_outcome(
    estimated: Trajectory,
    ground_truth: Trajectory,
    events,
    mislead_min: float = 0.25,
    drift_bound: float = 10.0,
) -> AttackOutcome:
    """Map a run onto exactly one regime: snapback, drift_away, misleading or none."""
    evs = _event_list(events)
    resets = tuple(t for t, e in evs if e == "pose_reset")
    losses = [t for t, e in evs if e == "tracking_lost"]
    loss_time = losses[0] if losses else None
    est, gt = _match(estimated, ground_truth, 1e-6)
    if len(est) == 0:
        raise ValueError("estimated and ground-truth trajectories share no timestamps")
    err = np.linalg.norm(est - gt, axis=1)
    final = float(err[-1])
    ate = float(np.sqrt(np.mean(err ** 2)))
    moved_before = None
    if resets:
        first = resets[0]
        gt_t = np.asarray(ground_truth.t)
        sel = gt_t <= first + 1e-9
        if sel.any():
            p = np.asarray(ground_truth.position)[sel]
            moved_before = float(np.linalg.norm(p[-1] - p[0]))
        regime = Regime.SNAPBACK
    elif loss_time is not None and final > drift_bound:
        regime = Regime.DRIFT_AWAY
    elif final >= mislead_min:
        regime = Regime.MISLEADING
    else:
        regime = Regime.NONE
    return AttackOutcome(regime, ate, final, loss_time, resets, moved_before)


@dataclass(frozen=True)
class SuccessRate:
    rate: float
    successes: int
    trials: int
    mean_translation_before_reset: float | None = None


def attack_success_rate(
    outcomes: Sequence[AttackOutcome],
    predicate: Callable[[AttackOutcome], bool] | str = "snapback",
) -> SuccessRate:
    """Fraction of trials satisfying ``predicate`` (a callable or a regime name)."""
    if len(outcomes) < 1:
        raise ValueError("need at least one trial")
    if isinstance(predicate, str):
        regime = Regime(predicate)
        pred = lambda o: o.regime is regime  # noqa: E731
    else:
        pred = predicate
    hits = [o for o in outcomes if pred(o)]
    moved = [o.mean_translation_before_reset for o in hits if o.mean_translation_before_reset is not None]
    mean_moved = float(np.mean(moved)) if moved and predicate == "snapback" else None
    return SuccessRate(len(hits) / len(outcomes), len(hits), len(outcomes), mean_moved)


# -------------------------------------------------------------------- scene


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("box needs lo < hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def centered(cls, center, extents) -> "Box":
        c = np.asarray(center, float)
        h = 0.5 * np.asarray(extents, float)
        return cls(tuple(c - h), tuple(c + h))

    def contains_open(self, p) -> bool:
        p = np.asarray(p, float)
        return bool(np.all(p > np.array(self.lo)) and np.all(p < np.array(self.hi)))


@dataclass(frozen=True)
class Zone:
    zone_id: str
    box: Box
    owner: str


@dataclass(frozen=True)
class SceneSpec:
    anchors: tuple[tuple[str, tuple[float, float, float]], ...] = ()
    zones: tuple[Zone, ...] = ()
    display_fov: tuple[float, float] = DEFAULT_FOV

    def __post_init__(self):
        h, v = self.display_fov
        if not (0 < h < math.pi / 2 and 0 < v < math.pi / 2):
            raise ValueError("FOV half-angles must lie in (0, pi/2)")


def in_fov(d, fov=DEFAULT_FOV) -> bool:
    """Display frame looks along +y with x to the right and z up."""
    x, y, z = d
    if y <= 0:
        return False
    return abs(math.atan2(x, y)) <= fov[0] and abs(math.atan2(z, y)) <= fov[1]


def project_to_display(position, orientation, anchor, fov=DEFAULT_FOV) -> tuple[np.ndarray, bool]:
    """World anchor expressed in the display frame of the given (estimated) pose."""
    q = Q.normalize(orientation)
    d = Q.rotate_inverse(q, np.asarray(anchor, float) - np.asarray(position, float))
    return d, in_fov(d, fov)


def display_track(traj: Trajectory, anchor) -> np.ndarray:
    """Display-frame anchor position at every pose of ``traj``."""
    p = np.asarray(traj.position, float)
    out = np.empty_like(p)
    a = np.asarray(anchor, float)
    for i, (pos, q) in enumerate(zip(p, np.asarray(traj.orientation, float))):
        out[i] = Q.rotate_inverse(q, a - pos)
    return out


def headlock_score(display_positions, true_positions, min_motion: float = 0.5) -> float:
    """``1 - std(display) / std(true view)``, clamped to [0, 1].

    ``true_positions`` is the anchor as seen from the truly moving user. A
    world-locked anchor moves on the display exactly as in the true view
    (score near 0); a head-locked one stays put (score near 1).
    """
    disp = np.asarray(display_positions, float)
    true = np.asarray(true_positions, float)
    if disp.shape != true.shape or disp.ndim != 2:
        raise ValueError("display and true tracks must have the same (N, 3) shape")
    displacement = float(np.max(np.linalg.norm(true - true[0], axis=1)))
    if displacement < min_motion:
        raise ValueError(f"user moved {displacement:.3f} m; need at least {min_motion} m")
    s_true = math.sqrt(float(np.sum(true.var(axis=0))))
    s_disp = math.sqrt(float(np.sum(disp.var(axis=0))))
    return float(min(1.0, max(0.0, 1.0 - s_disp / s_true)))


@dataclass(frozen=True)
class Placement:
    t: float
    object_id: str
    display_offset: tuple[float, float, float]
    placer: str


@dataclass(frozen=True)
class Violation:
    object_id: str
    zone_id: str
    t: float
    world_position: tuple[float, float, float]


def _pose_at(traj: Trajectory, t: float):
    i = int(np.clip(np.searchsorted(traj.t, t + 1e-9, side="right") - 1, 0, len(traj) - 1))
    return np.asarray(traj.position[i], float), np.asarray(traj.orientation[i], float)


def _anchor_world(traj, placement):
    p, q = _pose_at(traj, placement.t)
    return p + Q.rotate(q, placement.display_offset)


def zone_violation(
    estimated: Trajectory,
    scene: SceneSpec,
    placements: Iterable[Placement],
    ground_truth: Trajectory | None = None,
) -> tuple[list[Violation], list[Violation]]:
    """Re-anchor display-frame placements into the world and test zone containment.

    Returns ``(estimated_violations, ground_truth_violations)``; the second list
    is empty without a ground truth. Zones owned by the placer never count.
    """
    est_v, gt_v = [], []
    for pl in placements:
        for traj, sink in ((estimated, est_v), (ground_truth, gt_v)):
            if traj is None:
                continue
            w = _anchor_world(traj, pl)
            for z in scene.zones:
                if z.owner != pl.placer and z.box.contains_open(w):
                    sink.append(Violation(pl.object_id, z.zone_id, pl.t, tuple(w.tolist())))
    return est_v, gt_v


def _segment_hits_box(a, b, lo, hi) -> bool:
    """Slab test for the segment a->b against an axis-aligned box."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for i in range(3):
        if abs(d[i]) < 1e-15:
            if a[i] <= lo[i] or a[i] >= hi[i]:
                return False
            continue
        u = (lo[i] - a[i]) / d[i]
        v = (hi[i] - a[i]) / d[i]
        if u > v:
            u, v = v, u
        t0, t1 = max(t0, u), min(t1, v)
        if t0 > t1:
            return False
    return True


@dataclass
class OcclusionReport:
    fraction: float
    blocked: np.ndarray
    counted: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))


def occlusion_fraction(
    estimated: Trajectory,
    ground_truth: Trajectory,
    wall: Box,
    target,
    fov=DEFAULT_FOV,
    window: tuple[float, float] = (-math.inf, math.inf),
) -> OcclusionReport:
    """Fraction of in-FOV samples where the virtual wall hides the real target.

    The target is a real object seen at its true relative position; the wall is
    virtual and rendered with the estimated pose. Both are compared in the
    display frame; samples with the target out of view are not counted.
    """
    t = np.asarray(ground_truth.t, float)
    idx = estimated.at_times(t, 1e-6)
    lo, hi = np.array(wall.lo), np.array(wall.hi)
    target = np.asarray(target, float)
    blocked = np.zeros(len(t), bool)
    counted = np.zeros(len(t), bool)
    for i in range(len(t)):
        if idx[i] < 0 or not (window[0] <= t[i] < window[1]):
            continue
        tgt, visible = project_to_display(ground_truth.position[i], ground_truth.orientation[i], target, fov)
        if not visible:
            continue
        counted[i] = True
        # the display ray eye->target, placed in the world by the estimated pose
        pe = np.asarray(estimated.position[idx[i]], float)
        qe = estimated.orientation[idx[i]]
        blocked[i] = _segment_hits_box(pe, pe + Q.rotate(qe, tgt), lo, hi)
    n = int(counted.sum())
    frac = float(blocked[counted].mean()) if n else 0.0
    return OcclusionReport(frac, blocked, counted, t)


def save_outcomes(rows: Sequence[tuple[int, AttackOutcome]], path) -> None:
    ensure_dir(Path(path).parent)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_HEADER)
        for trial, o in rows:
            w.writerow(outcome_row(trial, o))


def outcome_row(trial, o: AttackOutcome) -> list[str]:
    return [
        str(trial),
        o.regime.value,
        f"{o.ate_rmse:.9g}",
        f"{o.final_offset:.9g}",
        "" if o.loss_time is None else f"{o.loss_time:.9g}",
        str(len(o.reset_times)),
    ]
