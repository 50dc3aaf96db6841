import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonicpose import quat as Q
from sonicpose.attack_eval import (
    AttackOutcome,
    Box,
    Placement,
    Regime,
    SceneSpec,
    Zone,
    ate_rmse,
    attack_success_rate,
    classify_outcome,
    display_track,
    headlock_score,
    in_fov,
    occlusion_fraction,
    project_to_display,
    save_outcomes,
    zone_violation,
)
from sonicpose.perturbation import ConstantBias, inject_constant
from sonicpose.trace_model import Trajectory
from sonicpose.vio_estimator import run_estimator


def _line(n=101, length=4.0, offset=(0.0, 0.0, 0.0)):
    t = np.linspace(0.0, 10.0, n)
    p = np.zeros((n, 3))
    p[:, 1] = np.linspace(0.0, length, n)
    p += np.asarray(offset)
    q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return Trajectory(t, p, q)


def test_ate_zero_for_identical():
    gt = _line()
    assert ate_rmse(gt, gt) == 0.0


def test_ate_constant_offset():
    gt = _line()
    assert abs(ate_rmse(_line(offset=(0.3, 0.4, 0.0)), gt) - 0.5) < 1e-12


def test_ate_needs_matches():
    gt = _line()
    shifted = Trajectory(gt.t + 100.0, gt.position, gt.orientation)
    with pytest.raises(ValueError):
        ate_rmse(shifted, gt)


def test_classify_regimes():
    gt = _line()
    assert classify_outcome(gt, gt, []).regime is Regime.NONE
    assert classify_outcome(_line(offset=(0.5, 0, 0)), gt, []).regime is Regime.MISLEADING
    snap = classify_outcome(gt, gt, [(5.0, "fix_rejected"), (5.0, "tracking_lost"), (5.0, "pose_reset")])
    assert snap.regime is Regime.SNAPBACK and snap.reset_times == (5.0,)
    assert abs(snap.mean_translation_before_reset - 2.0) < 1e-9
    drift = classify_outcome(_line(offset=(20.0, 0, 0)), gt, [(3.0, "tracking_lost")])
    assert drift.regime is Regime.DRIFT_AWAY and drift.loss_time == 3.0
    # lost but still close: misleading, not drift-away
    assert classify_outcome(_line(offset=(1.0, 0, 0)), gt, [(3.0, "tracking_lost")]).regime is Regime.MISLEADING


def test_outcome_invariants():
    with pytest.raises(ValueError):
        AttackOutcome(Regime.SNAPBACK, 0.0, 0.0)
    with pytest.raises(ValueError):
        AttackOutcome(Regime.DRIFT_AWAY, 0.0, 20.0)


def _outcomes(regimes):
    return [
        AttackOutcome(r, 0.0, 0.0, 1.0 if r == "drift_away" else None, (1.0,) if r == "snapback" else (), 2.0 if r == "snapback" else None)
        for r in regimes
    ]


def test_attack_success_rate():
    res = attack_success_rate(_outcomes(["snapback", "snapback", "none", "misleading"]))
    assert res.rate == 0.5 and res.successes == 2 and res.trials == 4
    assert res.mean_translation_before_reset == 2.0
    assert attack_success_rate(_outcomes(["none"]), lambda o: o.regime is Regime.NONE).rate == 1.0
    with pytest.raises(ValueError):
        attack_success_rate([])


@settings(max_examples=40)
@given(st.lists(st.sampled_from(["none", "misleading", "snapback", "drift_away"]), min_size=1, max_size=30), st.randoms())
def test_asr_is_order_invariant(regimes, rnd):
    outs = _outcomes(regimes)
    shuffled = list(outs)
    rnd.shuffle(shuffled)
    assert attack_success_rate(outs).rate == attack_success_rate(shuffled).rate
    assert 0.0 <= attack_success_rate(outs, "misleading").rate <= 1.0


def test_project_identity_and_translation():
    d, vis = project_to_display((0, 0, 0), Q.IDENTITY, (0.0, 2.0, 0.0))
    assert np.allclose(d, [0, 2, 0]) and vis
    d, vis = project_to_display((0, 3, 0), Q.IDENTITY, (0.0, 2.0, 0.0))
    assert np.allclose(d, [0, -1, 0]) and not vis


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.floats(-math.pi, math.pi))
def test_project_translation_covariance(p, shift, yaw):
    q = Q.from_axis_angle((0, 0, 1), yaw)
    anchor = np.array([1.0, 4.0, 0.5])
    d1, _ = project_to_display(p, q, anchor)
    d2, _ = project_to_display(np.add(p, shift), q, anchor + np.asarray(shift))
    assert np.allclose(d1, d2, atol=1e-9)


def test_fov_edges():
    assert in_fov((0.0, 1.0, 0.0))
    assert not in_fov((0.0, -1.0, 0.0))
    assert not in_fov((2.0, 1.0, 0.0))


def test_headlock_scores():
    gt = _line()
    anchor = (3.0, 2.0, 0.0)
    true = display_track(gt, anchor)
    assert headlock_score(display_track(gt, anchor), true) < 0.1
    frozen = Trajectory(gt.t, np.zeros_like(gt.position), gt.orientation)
    assert headlock_score(display_track(frozen, anchor), true) > 0.9
    still = Trajectory(gt.t, np.zeros_like(gt.position), gt.orientation)
    with pytest.raises(ValueError, match="moved"):
        headlock_score(display_track(still, anchor), display_track(still, anchor))


def test_zone_boundary_is_open():
    zone = Zone("z", Box((1.0, 1.0, -1.0), (2.0, 2.0, 1.0)), "other")
    scene = SceneSpec(zones=(zone,))
    gt = _line(length=0.0)
    on_face = Placement(0.0, "a", (1.0, 1.5, 0.0), "me")
    inside = Placement(0.0, "b", (1.5, 1.5, 0.0), "me")
    est_v, gt_v = zone_violation(gt, scene, [on_face, inside], gt)
    assert [v.object_id for v in est_v] == ["b"] and [v.object_id for v in gt_v] == ["b"]
    own = SceneSpec(zones=(Zone("z", zone.box, "me"),))
    assert zone_violation(gt, own, [inside])[0] == []


def test_zone_violation_from_displaced_estimate():
    zone = Zone("z", Box((1.0, 1.0, -1.0), (2.0, 2.0, 1.0)), "other")
    gt = _line(length=0.0)
    est = _line(length=0.0, offset=(1.5, 0.0, 0.0))
    pl = Placement(5.0, "obj", (0.0, 1.5, 0.0), "me")
    est_v, gt_v = zone_violation(est, SceneSpec(zones=(zone,)), [pl], gt)
    assert len(est_v) == 1 and gt_v == []


def test_occlusion_only_counts_visible_target():
    gt = _line(length=0.0)
    wall = Box((-1.0, 1.0, -1.0), (1.0, 1.2, 1.0))
    behind = occlusion_fraction(gt, gt, wall, (0.0, -5.0, 0.0))
    assert behind.counted.sum() == 0 and behind.fraction == 0.0
    ahead = occlusion_fraction(gt, gt, wall, (0.0, 5.0, 0.0))
    assert ahead.fraction == 1.0
    clear = occlusion_fraction(gt, gt, wall, (0.0, 0.5, 0.0))
    assert clear.fraction == 0.0 and clear.counted.all()


def test_occlusion_from_estimate_shift():
    gt = _line(length=0.0)
    wall = Box((-1.0, 1.0, -1.0), (1.0, 1.2, 1.0))
    # target 0.5 m ahead is clear in truth; an estimate 0.6 m ahead pulls the wall in front of it
    est = _line(length=0.0, offset=(0.0, 0.6, 0.0))
    assert occlusion_fraction(est, gt, wall, (0.0, 0.5, 0.0)).fraction == 1.0


@pytest.mark.parametrize("m", [1.1, 4.1, 6.2])
def test_estimate_steps_are_small_outside_resets(noisy_walk, m):
    res = run_estimator(inject_constant(noisy_walk, ConstantBias("accel", "x", m)))
    p = res.trajectory.position
    t = res.trajectory.t
    step = np.linalg.norm(np.diff(p, axis=0), axis=1)
    resets = np.array(res.event_times("pose_reset"))
    near = np.zeros(len(step), bool)
    for r in resets:
        near |= np.abs(t[1:] - r) < 1e-6
    assert np.all(step[~near] <= 0.3)


def test_save_outcomes(tmp_path):
    save_outcomes([(0, _outcomes(["snapback"])[0])], tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "trial,regime,ate_rmse,final_offset,loss_time,resets"
    assert lines[1].startswith("0,snapback,")
