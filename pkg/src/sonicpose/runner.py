"""Scenario runner: build trace, inject attack, run the estimator, score, write CSVs."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attack_eval as ev
from .acoustic_channel import (
    AcousticTone,
    AdcModel,
    ResonanceProfile,
    apply_output_biasing,
    dc_alias_frequency,
)
from .config import AttackSpec, ExperimentConfig, SceneSpecConfig, TraceSpec
from .perturbation import ConstantBias, GmmModel, inject_constant, inject_gmm, load_gmm
from .trace_model import (
    Trace,
    channel_index,
    ensure_dir,
    generate_walk_trace,
    generate_window_trace,
    load_trace,
    save_trajectory,
)
from .vio_estimator import EstimatorConfig, run_estimator, save_events

log = logging.getLogger(__name__)

TRIAL_HEADER = [
    "point", "value", "trial", "seed", "regime", "ate_rmse", "final_offset",
    "loss_time", "resets", "attack_end", "loss_after_attack", "status",
]
AGGREGATE_HEADER = [
    "point", "value", "trials", "failed", "regime", "none", "misleading", "snapback",
    "drift_away", "asr", "mean_final_offset", "mean_loss_time", "loss_after_attack_rate",
    "mean_translation_before_reset",
]
SCENE_HEADER = [
    "point", "value", "trial", "scene", "headlock_score", "occlusion_fraction",
    "occlusion_after_pass", "violations", "gt_violations", "first_violation_t",
]


def _g(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


# ------------------------------------------------------------------ building


def build_trace(spec: TraceSpec, seed) -> Trace:
    noise = tuple(spec.noise)
    if spec.kind == "walk":
        return generate_walk_trace(spec.length_m, spec.duration_s, spec.imu_rate, spec.fix_rate, noise, seed)
    if spec.kind == "stationary":
        return generate_walk_trace(0.0, spec.duration_s, spec.imu_rate, spec.fix_rate, noise, seed)
    if spec.kind == "window":
        wps = [(w[0], w[1:4]) for w in spec.waypoints]
        return generate_window_trace(wps, spec.imu_rate, spec.fix_rate, noise, seed)
    return load_trace(spec.path, fix_rate=spec.fix_rate)


def attack_window_seconds(attack: AttackSpec, trace: Trace) -> tuple[float, float]:
    t = trace.imu.t
    if attack.window_fraction is not None:
        span = t[-1] - t[0]
        a, b = attack.window_fraction
        return float(t[0] + a * span), float(t[0] + b * span)
    return float(attack.window[0]), float(attack.window[1])


def _tone_frequency(attack: AttackSpec, profile: ResonanceProfile, rate: float) -> float:
    if attack.frequency is not None:
        return attack.frequency
    return dc_alias_frequency(profile.axes[attack.channel].center, rate)


def apply_attack(trace: Trace, attack: AttackSpec, rng: np.random.Generator) -> Trace:
    if not attack.enabled or attack.kind == "none":
        return trace
    w0, w1 = attack_window_seconds(attack, trace)
    sensor, axis = channel_index(attack.channel)
    if attack.kind == "constant":
        bias = ConstantBias(sensor, "xyz"[axis], attack.magnitude, (w0, w1))
        return inject_constant(trace, bias)
    if attack.kind == "tone":
        profile = (
            ResonanceProfile.hololens2(attack.half_width) if attack.profile == "hololens2" else ResonanceProfile.flat()
        )
        adc = AdcModel(trace.imu_rate, attack.defense, attack.max_jitter)
        tone = AcousticTone(
            _tone_frequency(attack, profile, trace.imu_rate),
            attack.amplitude * attack.volume_ratio,
            attack.phase,
            (w0, w1),
        )
        return apply_output_biasing(trace, tone, profile, adc, attack.channel, rng)
    model = (
        GmmModel.from_components(attack.components)
        if attack.components
        else load_gmm(attack.model_file)[attack.channel]
    )
    return inject_gmm(trace, model, attack.channel, (w0, w1), rng)


# ------------------------------------------------------------------- trials


@dataclass
class TrialResult:
    point: int
    value: object
    trial: int
    seed: int
    outcome: ev.AttackOutcome | None = None
    attack_end: float | None = None
    status: str = "ok"
    scene: dict | None = None
    events: list = field(default_factory=list)
    estimate: object = None
    ground_truth: object = None


def scene_metrics(scene: SceneSpecConfig, est, gt) -> dict:
    fov = tuple(math.radians(a) for a in scene.fov_deg)
    t = np.asarray(gt.t)
    win = t >= scene.eval_start
    out = {"scene": scene.kind}
    if scene.kind == "headlock":
        disp = ev.display_track(est, scene.anchor)
        true = ev.display_track(gt, scene.anchor)
        idx = est.at_times(t, 1e-6)
        sel = win & (idx >= 0)
        out["headlock_score"] = ev.headlock_score(disp[idx[sel]], true[sel])
    elif scene.kind == "blocking":
        wall = ev.Box(scene.wall_lo, scene.wall_hi)
        rep = ev.occlusion_fraction(est, gt, wall, scene.target, fov, (scene.eval_start, math.inf))
        out["occlusion_fraction"] = rep.fraction
        passed = np.asarray(gt.position)[:, 1] > scene.wall_hi[1]
        after = rep.counted & passed
        out["occlusion_after_pass"] = float(rep.blocked[after].mean()) if after.any() else float("nan")
    else:
        spec = ev.SceneSpec(
            zones=tuple(ev.Zone(z["id"], ev.Box(z["lo"], z["hi"]), z["owner"]) for z in scene.zones),
            display_fov=fov,
        )
        placements = [ev.Placement(p["t"], p["id"], tuple(p["offset"]), p["placer"]) for p in scene.placements]
        est_v, gt_v = ev.zone_violation(est, spec, placements, gt)
        out["violations"] = len(est_v)
        out["gt_violations"] = len(gt_v)
        out["first_violation_t"] = est_v[0].t if est_v else None
    return out


def run_trial(cfg: ExperimentConfig, point: int, value, trial: int, keep_tracks: bool = False) -> TrialResult:
    seed = cfg.seed + trial
    res = TrialResult(point, value, trial, seed)
    try:
        noise_ss, attack_ss = np.random.SeedSequence(seed).spawn(2)
        trace = build_trace(cfg.trace, int(noise_ss.generate_state(1)[0]))
        attacked = apply_attack(trace, cfg.attack, np.random.default_rng(attack_ss))
        if cfg.attack.enabled and cfg.attack.kind != "none":
            res.attack_end = min(attack_window_seconds(cfg.attack, trace)[1], float(trace.imu.t[-1]))
        est = run_estimator(attacked, cfg.estimator.build())
        res.outcome = ev.classify_outcome(
            est.trajectory, trace.ground_truth, est.events, cfg.outcome.mislead_min, cfg.outcome.drift_bound
        )
        res.events = [(e.t, e.event) for e in est.events]
        if cfg.scene is not None:
            res.scene = scene_metrics(cfg.scene, est.trajectory, trace.ground_truth)
        if keep_tracks:
            res.estimate = est.trajectory
            res.ground_truth = trace.ground_truth
    except Exception as exc:  # one bad trial must not sink the sweep
        log.warning("trial %d of point %d failed: %s", trial, point, exc)
        res.status = f"failed: {type(exc).__name__}: {exc}"
    return res


def _task(args):
    cfg, point, value, trial, keep = args
    return run_trial(cfg, point, value, trial, keep)


def sweep_points(cfg: ExperimentConfig) -> list[tuple[object, ExperimentConfig]]:
    if cfg.sweep is None:
        return [(None, cfg)]
    return [(v, cfg.with_value(cfg.sweep.variable, v)) for v in cfg.sweep.values]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialResult]
    out_dir: Path | None = None

    @property
    def failed(self) -> int:
        return sum(1 for t in self.trials if t.status != "ok")

    def by_point(self) -> dict[int, list[TrialResult]]:
        out: dict[int, list[TrialResult]] = {}
        for t in self.trials:
            out.setdefault(t.point, []).append(t)
        return out


def aggregate(trials: list[TrialResult]) -> dict:
    ok = [t for t in trials if t.outcome is not None]
    counts = {r.value: 0 for r in ev.Regime}
    for t in ok:
        counts[t.outcome.regime.value] += 1
    outcomes = [t.outcome for t in ok]
    asr = ev.attack_success_rate(outcomes, "snapback") if outcomes else None
    losses = [t.outcome.loss_time for t in ok if t.outcome.loss_time is not None]
    after = [
        t.outcome.loss_time is not None and t.attack_end is not None and t.outcome.loss_time > t.attack_end
        for t in ok
    ]
    mode = max(counts, key=lambda k: (counts[k], -list(counts).index(k))) if ok else ""
    return {
        "trials": len(trials),
        "failed": len(trials) - len(ok),
        "regime": mode,
        **counts,
        "asr": asr.rate if asr else None,
        "mean_final_offset": float(np.mean([o.final_offset for o in outcomes])) if outcomes else None,
        "mean_loss_time": float(np.mean(losses)) if losses else None,
        "loss_after_attack_rate": float(np.mean(after)) if after else None,
        "mean_translation_before_reset": asr.mean_translation_before_reset if asr else None,
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int | None = None) -> ExperimentResult:
    """Run every sweep point x trial; results are ordered by (point, trial)."""
    tasks = []
    for p, (value, pcfg) in enumerate(sweep_points(cfg)):
        for i in range(cfg.trials):
            tasks.append((pcfg, p, value, i, cfg.save_trajectories and i == 0))
    jobs = jobs or cfg.jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_task, tasks))
    else:
        trials = [_task(t) for t in tasks]
    result = ExperimentResult(cfg, trials)
    if out_dir is not None:
        write_results(result, out_dir)
    return result


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_g(v) for v in row])


def _value_text(v) -> str:
    if isinstance(v, (list, tuple)) and any(isinstance(x, dict) for x in v):
        return json.dumps(v, separators=(",", ":"), sort_keys=True)
    if isinstance(v, (list, tuple)):
        return "[" + " ".join(_g(float(x)) if isinstance(x, (int, float)) else str(x) for x in v) + "]"
    if isinstance(v, float):
        return _g(v)
    return "" if v is None else str(v)


def write_results(result: ExperimentResult, out_dir) -> Path:
    d = ensure_dir(out_dir)
    result.out_dir = d
    rows = []
    for t in result.trials:
        o = t.outcome
        after = None
        if o is not None and t.attack_end is not None:
            after = o.loss_time is not None and o.loss_time > t.attack_end
        rows.append([
            t.point, _value_text(t.value), t.trial, t.seed,
            o.regime.value if o else "", o.ate_rmse if o else None, o.final_offset if o else None,
            o.loss_time if o else None, len(o.reset_times) if o else None,
            t.attack_end, after, t.status,
        ])
    _write_csv(d / "trials.csv", TRIAL_HEADER, rows)
    _write_csv(
        d / "outcomes.csv",
        ev.OUTCOME_HEADER,
        [ev.outcome_row(i, t.outcome) for i, t in enumerate(result.trials) if t.outcome is not None],
    )
    agg_rows = []
    for p, trials in result.by_point().items():
        a = aggregate(trials)
        agg_rows.append([p, _value_text(trials[0].value)] + [a[k] for k in AGGREGATE_HEADER[2:]])
    _write_csv(d / "aggregate.csv", AGGREGATE_HEADER, agg_rows)
    _write_csv(
        d / "events.csv",
        ["point", "trial", "t", "event"],
        [(t.point, t.trial, et, name) for t in result.trials for et, name in t.events],
    )
    if result.config.scene is not None:
        scene_rows = []
        for t in result.trials:
            s = t.scene or {}
            scene_rows.append([
                t.point, _value_text(t.value), t.trial, s.get("scene", result.config.scene.kind),
                s.get("headlock_score"), s.get("occlusion_fraction"), s.get("occlusion_after_pass"),
                s.get("violations"), s.get("gt_violations"), s.get("first_violation_t"),
            ])
        _write_csv(d / "scene.csv", SCENE_HEADER, scene_rows)
    tracks = [t for t in result.trials if t.estimate is not None]
    if tracks:
        tidy = []
        est_dir = ensure_dir(d / "estimates")
        for t in tracks:
            e, g = t.estimate, t.ground_truth
            for k in range(len(e)):
                tidy.append([t.point, t.trial, float(e.t[k]), *map(float, e.position[k]), *map(float, g.position[k])])
            save_trajectory(e, est_dir / f"point{t.point}_trial{t.trial}.csv")
            save_events([_Ev(*x) for x in t.events], est_dir / f"point{t.point}_trial{t.trial}_events.csv")
        _write_csv(
            d / "trajectories.csv",
            ["point", "trial", "t", "est_x", "est_y", "est_z", "gt_x", "gt_y", "gt_z"],
            tidy,
        )
    return d


@dataclass(frozen=True)
class _Ev:
    t: float
    event: str


# --------------------------------------------------------------- calibration

SEVERITY = {"none": 0, "misleading": 1, "snapback": 2, "drift_away": 2}


@dataclass
class CalibrationReport:
    channel: str
    grid: list[tuple[float, str, float]]
    mislead_boundary: float | None = None
    loss_boundary: float | None = None
    diagnostics: list[str] = field(default_factory=list)
    recommended: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "mislead_boundary": self.mislead_boundary,
            "loss_boundary": self.loss_boundary,
            "grid": [{"magnitude": m, "regime": r, "final_offset": f} for m, r, f in self.grid],
            "diagnostics": list(self.diagnostics),
            "recommended": dict(self.recommended),
        }


CAL_TARGETS = {"accel": (4.1, 6.1), "gyro": (1.0, 1.6)}


def _evaluate(trace: Trace, est_cfg: EstimatorConfig, channel: str, m: float, outcome) -> ev.AttackOutcome:
    sensor, axis = channel_index(channel)
    attacked = inject_constant(trace, ConstantBias(sensor, "xyz"[axis], m))
    r = run_estimator(attacked, est_cfg)
    return ev.classify_outcome(r.trajectory, trace.ground_truth, r.events, outcome.mislead_min, outcome.drift_bound)


def calibrate(
    cfg: ExperimentConfig,
    channel: str = "accel_x",
    grid: list[float] | None = None,
    tol: float | None = None,
    estimator: EstimatorConfig | None = None,
) -> CalibrationReport:
    """Bisect the constant-bias magnitude at which the regime changes.

    A coarse grid is checked for monotone severity first; a decrease in
    severity between neighbours is reported as a diagnostic.
    """
    sensor, _ = channel_index(channel)
    if grid is None:
        grid = list(np.round(np.arange(0.0, 9.5 + 1e-9, 0.5), 6)) if sensor == "accel" else list(
            np.round(np.arange(0.0, 2.0 + 1e-9, 0.2), 6)
        )
    tol = tol if tol is not None else (0.1 if sensor == "accel" else 0.05)
    est_cfg = estimator or cfg.estimator.build()
    trace = build_trace(cfg.trace, cfg.seed)
    rows = []
    for m in grid:
        o = _evaluate(trace, est_cfg, channel, float(m), cfg.outcome)
        rows.append((float(m), o.regime.value, o.final_offset))
    rep = CalibrationReport(channel, rows)
    sev = [SEVERITY[r] for _, r, _ in rows]
    for (m0, r0, _), (m1, r1, _), s0, s1 in zip(rows, rows[1:], sev, sev[1:]):
        if s1 < s0:
            rep.diagnostics.append(f"non-monotone response: {r0} at {m0:g} but {r1} at {m1:g}")
    if rep.diagnostics:
        return rep

    def boundary(level):
        idx = next((i for i, s in enumerate(sev) if s >= level), None)
        if idx is None:
            return None
        if idx == 0:
            return rows[0][0]
        lo, hi = rows[idx - 1][0], rows[idx][0]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if SEVERITY[_evaluate(trace, est_cfg, channel, mid, cfg.outcome).regime.value] >= level:
                hi = mid
            else:
                lo = mid
        return hi

    rep.mislead_boundary = boundary(1)
    rep.loss_boundary = boundary(2)
    if rep.loss_boundary is None:
        rep.diagnostics.append("no loss boundary found within the grid; is the rejection gate disabled?")
        return rep
    lo_t, hi_t = CAL_TARGETS[sensor]
    if not lo_t < rep.loss_boundary <= hi_t:
        target = 0.5 * (lo_t + hi_t)
        if sensor == "accel":
            rep.recommended["reject_threshold"] = est_cfg.reject_threshold * target / rep.loss_boundary
        else:
            rep.recommended["reject_angle"] = est_cfg.reject_angle * target / rep.loss_boundary
    return rep
