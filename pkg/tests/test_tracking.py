import csv

import numpy as np
import pytest

from fingrasp.decision import NetworkParams
from fingrasp.errors import TrackInitError
from fingrasp.geometry import RigidTransform, make_box, make_cylinder
from fingrasp.planner import GraspPlanner, PlannerConfig
from fingrasp.representation import (
    GraspFrame,
    compute_representation,
    zero_axis_for,
)
from fingrasp.scenes import Scene, overhead_camera, sample_point_cloud
from fingrasp.taxonomy import builtin_taxonomy, pose_from_representation
from fingrasp.tracking import (
    TrackState,
    associate,
    export_sequence,
    init_track,
    load_sequence_transforms,
    make_scripted_sequence,
    save_track_log,
    step_track,
    track_sequence,
)

TOP_DOWN = np.array([0.0, 0.0, -1.0])


def simple_scene(identifier="toy-0"):
    box = make_box((0.06, 0.04, 0.05))
    return Scene([(box, RigidTransform(np.eye(3), np.array([0.0, 0.0, 0.025])))],
                 0.0, identifier)


def clutter_scene():
    box = make_box((0.06, 0.04, 0.05))
    can = make_cylinder(0.018, 0.06)
    return Scene([
        (box, RigidTransform(np.eye(3), np.array([-0.06, 0.0, 0.025]))),
        (can, RigidTransform(np.eye(3), np.array([0.07, 0.02, 0.03]))),
    ], 0.0, "household-1")


def make_planner(seed=0):
    config = PlannerConfig(num_grasp_points=12, top_k=80, augmentations=0,
                           seed=seed)
    return GraspPlanner(NetworkParams.init(3), config)


def rep_at(scene, point):
    frame = GraspFrame(np.asarray(point, dtype=float), TOP_DOWN,
                       zero_axis_for(TOP_DOWN))
    return compute_representation(scene, frame), frame


def grasp_from(scene, point, cell=None):
    rep, frame = rep_at(scene, point)
    if cell is None:
        valid = np.argwhere(np.nan_to_num(rep.scores) > 0)
        cell = tuple(valid[0])
    return rep, pose_from_representation(frame, rep, cell, builtin_taxonomy()[0])


def test_init_delegates_to_planner():
    scene = clutter_scene()
    planner = make_planner(seed=4)
    cloud = sample_point_cloud(scene, overhead_camera(scene), 2500)
    state = init_track(scene, planner, cloud=cloud)
    plan = planner.plan(scene, cloud)
    assert np.array_equal(state.grasp.translation, plan.grasp.translation)
    assert np.array_equal(state.grasp.rotation, plan.grasp.rotation)
    assert state.grasp.type_id == plan.grasp.type_id
    assert state.similarity == 1.0
    assert state.frame_index == 0
    assert not state.terminated


def test_init_empty_scene_fails():
    empty = Scene([], 0.0, "toy-9")
    with pytest.raises(TrackInitError):
        with np.testing.suppress_warnings() as sup:
            sup.filter(UserWarning)
            init_track(empty, make_planner())


def test_associate_picks_anchor_itself():
    scene = simple_scene()
    anchor, grasp = grasp_from(scene, [0.0, 0.0, 0.05])
    decoy_rep, decoy = grasp_from(scene, [0.02, 0.01, 0.05])
    idx, sims = associate(anchor, [(decoy_rep, decoy), (anchor, grasp)],
                          predicted=grasp.translation)
    assert idx == 1
    assert sims[1] == pytest.approx(1.0)
    assert sims[0] <= 1.0


def test_associate_translated_twin_rep_matches():
    scene = simple_scene()
    shift = np.array([0.05, -0.03, 0.0])
    moved = scene.transformed(RigidTransform(np.eye(3), shift))
    anchor, grasp = grasp_from(scene, [0.0, 0.0, 0.05])
    twin_rep, twin = grasp_from(moved, np.array([0.0, 0.0, 0.05]) + shift)
    assert np.allclose(np.nan_to_num(twin_rep.scores),
                       np.nan_to_num(anchor.scores), atol=1e-9)
    assert np.allclose(np.nan_to_num(twin_rep.widths),
                       np.nan_to_num(anchor.widths), atol=1e-9)
    far_rep, far = grasp_from(moved, np.array([0.03, 0.02, 0.05]) + shift)
    idx, _ = associate(anchor, [(far_rep, far), (twin_rep, twin)],
                       predicted=grasp.translation + shift)
    assert idx == 1


def test_associate_rotation_shifts_bins():
    scene = simple_scene()
    yaw = np.deg2rad(15.0)
    tf = RigidTransform.from_yaw(yaw)
    rotated = scene.transformed(tf)
    anchor = rep_at(scene, [0.0, 0.0, 0.05])[0]
    twin = rep_at(rotated, tf.apply(np.array([0.0, 0.0, 0.05])))[0]
    assert np.allclose(np.nan_to_num(twin.scores),
                       np.nan_to_num(np.roll(anchor.scores, -1, axis=0)),
                       atol=1e-9)
    assert np.allclose(np.nan_to_num(twin.widths),
                       np.nan_to_num(np.roll(anchor.widths, -1, axis=0)),
                       atol=1e-9)


def test_associate_gate_and_tiebreak():
    scene = simple_scene()
    anchor, grasp = grasp_from(scene, [0.0, 0.0, 0.05])
    far_rep, far = grasp_from(scene, [0.02, 0.015, 0.05])
    far = type(far)(far.rotation, far.translation + np.array([0.5, 0.0, 0.0]),
                    far.width, far.type_id, far.cell)
    idx, sims = associate(anchor, [(far_rep, far)], predicted=grasp.translation)
    assert idx is None
    assert len(sims) == 1
    # equal similarity: the spatially nearer candidate wins
    near = type(grasp)(grasp.rotation, grasp.translation + np.array([0.002, 0.0, 0.0]),
                       grasp.width, grasp.type_id, grasp.cell)
    farther = type(grasp)(grasp.rotation, grasp.translation + np.array([0.03, 0.0, 0.0]),
                          grasp.width, grasp.type_id, grasp.cell)
    idx, _ = associate(anchor, [(anchor, farther), (anchor, near)],
                       predicted=grasp.translation)
    assert idx == 1
    with pytest.raises(ValueError):
        associate(anchor, [], predicted=grasp.translation)


def test_static_scene_is_fixed_point():
    scene = simple_scene()
    planner = make_planner(seed=2)
    state = init_track(scene, planner)
    stepped = step_track(state, scene, planner)
    assert stepped.similarity == pytest.approx(1.0)
    assert np.allclose(stepped.grasp.translation, state.grasp.translation,
                       atol=1e-9)
    assert np.allclose(stepped.grasp.rotation, state.grasp.rotation, atol=1e-9)
    assert stepped.frame_index == 1
    assert stepped.lost_count == 0


def test_tracks_scripted_translation():
    scene = simple_scene()
    planner = make_planner(seed=6)
    step = np.array([0.01, 0.0, 0.0])
    transforms = [RigidTransform(np.eye(3), i * step) for i in range(6)]
    frames = make_scripted_sequence(scene, transforms)
    states = track_sequence(frames, planner, alpha=1.0)
    assert len(states) == 6
    assert not states[-1].terminated
    start = states[0].grasp.translation
    for i, state in enumerate(states):
        assert np.linalg.norm(state.grasp.translation - (start + i * step)) < 1e-3
    deltas = [np.linalg.norm(b.grasp.translation - a.grasp.translation)
              for a, b in zip(states, states[1:])]
    for d in deltas:
        assert d < 0.01 + 1e-3


def test_smoothing_bounds_step_size():
    scene = simple_scene()
    planner = make_planner(seed=6)
    alpha = 0.6
    step = np.array([0.01, 0.0, 0.0])
    transforms = [RigidTransform(np.eye(3), i * step) for i in range(5)]
    frames = make_scripted_sequence(scene, transforms)
    states = track_sequence(frames, planner, alpha=alpha)
    lag_prev = 0.0
    for i, (a, b) in enumerate(zip(states, states[1:])):
        delta = np.linalg.norm(b.grasp.translation - a.grasp.translation)
        assert delta <= 0.01 * (1.0 + alpha) + 2e-3
        U = b.grasp.rotation
        assert np.allclose(U @ U.T, np.eye(3), atol=1e-9)
        # the smoothed pose trails the object: lag grows toward its limit
        truth = states[0].grasp.translation + (i + 1) * step
        lag = np.linalg.norm(b.grasp.translation - truth)
        assert lag >= lag_prev - 1e-9
        assert lag <= 0.01 * (1.0 - alpha) / alpha + 1e-3
        lag_prev = lag


def test_lost_track_terminates_after_three_frames():
    scene = simple_scene()
    planner = make_planner(seed=1)
    state = init_track(scene, planner)
    gone = Scene([], 0.0, "toy-0")
    for expected_lost in (1, 2, 3):
        state = step_track(state, gone, planner)
        assert state.lost_count == expected_lost
        assert state.similarity == 0.0
    assert state.terminated
    with pytest.raises(ValueError):
        step_track(state, gone, planner)
    # track_sequence stops early on termination
    frames = [scene, gone, gone, gone, gone, gone]
    states = track_sequence(frames, planner)
    assert states[-1].terminated
    assert len(states) == 4


def test_reacquire_resets_lost_count():
    scene = simple_scene()
    planner = make_planner(seed=1)
    state = init_track(scene, planner)
    gone = Scene([], 0.0, "toy-0")
    state = step_track(state, gone, planner)
    assert state.lost_count == 1
    state = step_track(state, scene, planner)
    assert state.lost_count == 0
    assert not state.terminated
    assert state.similarity > 0.9


def test_state_validation():
    scene = simple_scene()
    anchor, grasp = grasp_from(scene, [0.0, 0.0, 0.05])
    with pytest.raises(ValueError):
        TrackState(anchor, grasp, 1.0, 0, alpha=0.0)
    with pytest.raises(ValueError):
        TrackState(anchor, grasp, 1.5, 0)
    with pytest.raises(ValueError):
        TrackState(anchor, grasp, 1.0, 0, gate=-0.1)


def test_sequence_export_and_log(tmp_path):
    scene = simple_scene()
    planner = make_planner(seed=3)
    transforms = [RigidTransform.from_yaw(np.deg2rad(3.0 * i), (0.005 * i, 0.0, 0.0))
                  for i in range(3)]
    frames = make_scripted_sequence(scene, transforms)
    states = track_sequence(frames, planner)
    log = tmp_path / "track.csv"
    save_track_log(states, log)
    rows = list(csv.reader(log.open()))
    assert rows[0][:4] == ["frame", "tx", "ty", "tz"]
    assert len(rows) == len(states) + 1
    out = tmp_path / "seq"
    export_sequence(frames, transforms, out, cloud_resolution=400)
    assert sorted(p.name for p in out.glob("*.ply")) == [
        "frame_000.ply", "frame_001.ply", "frame_002.ply"]
    back = load_sequence_transforms(out)
    assert len(back) == 3
    for tf, orig in zip(back, transforms):
        assert np.allclose(tf.rotation, orig.rotation)
        assert np.allclose(tf.translation, orig.translation)
