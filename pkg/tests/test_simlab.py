import json

import numpy as np
import pytest

from fingrasp.errors import InsufficientDataError
from fingrasp.geometry import RigidTransform, make_box, make_icosphere, make_wedge
from fingrasp.representation import (
    GraspFrame,
    best_antipodal_cell,
    compute_representation,
    zero_axis_for,
)
from fingrasp.scenes import Scene
from fingrasp.simlab import (
    CATEGORY_NAMES,
    OracleConfig,
    TrialDataset,
    TrialOutcome,
    TrialRecord,
    collect_trials,
    evaluate_policy,
    learning_curve,
    make_category_scene,
    save_category_bars_svg,
    save_learning_curve_csv,
    save_learning_curve_svg,
    simulate_grasp_outcome,
    split_dataset,
    standard_scene_suite,
    wilson_interval,
)
from fingrasp.decision import TrainConfig, train
from fingrasp.simlab import classification_accuracy
from fingrasp.taxonomy import builtin_hand, builtin_taxonomy, pose_from_representation


def box_scene(extents, center_z=None, identifier="toy-0"):
    mesh = make_box(extents)
    z = extents[2] / 2.0 if center_z is None else center_z
    pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, z]))
    return Scene([(mesh, pose)], 0.0, identifier)


def top_frame(point):
    approach = np.array([0.0, 0.0, -1.0])
    return GraspFrame(np.asarray(point, dtype=float), approach,
                      zero_axis_for(approach))


def grasp_on(scene, frame, type_id=0, cell=None):
    rep = compute_representation(scene, frame)
    if cell is None:
        cell = best_antipodal_cell(rep)
    gtype = builtin_taxonomy()[type_id]
    return pose_from_representation(frame, rep, cell, gtype), rep, cell


def test_pinch_on_free_box_succeeds():
    # 4 cm across the flats; long enough that every finger lane lands on it
    scene = box_scene((0.09, 0.04, 0.05))
    grasp, rep, cell = grasp_on(scene, top_frame([0.0, 0.0, 0.05]))
    assert rep.widths[cell] == pytest.approx(0.04, abs=1e-6)
    out = simulate_grasp_outcome(scene, grasp)
    assert out.success == 1
    assert out.reason == "success"
    assert out.target == 0
    assert len(out.contacts) == 2


def test_free_space_grasp_reports_no_contact():
    scene = box_scene((0.09, 0.04, 0.05))
    grasp, _, _ = grasp_on(scene, top_frame([0.0, 0.0, 0.05]))
    grasp.translation = grasp.translation + np.array([0.0, 0.0, 0.4])
    out = simulate_grasp_outcome(scene, grasp)
    assert out.success == 0
    assert out.reason == "no_contact"
    assert out.contacts == ()
    assert out.target is None


def test_wedge_friction_flip_matches_cone_containment():
    # apex angle 30 deg: face normals tilt 15 deg from horizontal, so slip
    # happens exactly when the friction coefficient is below tan(15 deg)
    half_angle = np.deg2rad(15.0)
    height = 0.05
    wedge = make_wedge(2.0 * height * np.tan(half_angle), 0.12, height)
    scene = Scene([(wedge, RigidTransform(np.eye(3), np.zeros(3)))], 0.0, "toy-1")
    frame = top_frame([0.0, 0.0, height])
    rep = compute_representation(scene, frame)
    grasp = pose_from_representation(frame, rep, (6, 1), builtin_taxonomy()[0])
    for mu in (0.2, 0.8):
        out = simulate_grasp_outcome(scene, grasp,
                                     oracle=OracleConfig(friction=mu))
        cone_holds = mu > np.tan(half_angle)
        assert out.success == int(cone_holds)
        assert out.reason == ("success" if cone_holds else "no_force_closure")


def test_single_contact_is_too_few():
    # narrow box: only the thumb lane reaches it, the index sweeps past
    scene = box_scene((0.03, 0.04, 0.05))
    frame = top_frame([0.0, 0.0, 0.05])
    rep = compute_representation(scene, frame)
    grasp = pose_from_representation(frame, rep, (0, 0), builtin_taxonomy()[0])
    out = simulate_grasp_outcome(scene, grasp)
    assert out.success == 0
    assert out.reason == "too_few_contacts"
    assert len([c for c in out.contacts if c.object_index == 0]) == 1


def test_lift_blocked_by_stacked_object():
    base = make_box((0.09, 0.04, 0.04))
    cap = make_box((0.015, 0.015, 0.015))
    scene = Scene([
        (base, RigidTransform(np.eye(3), np.array([0.0, 0.0, 0.02]))),
        (cap, RigidTransform(np.eye(3), np.array([0.0, 0.0, 0.0475]))),
    ], 0.0, "household-3")
    grasp, _, _ = grasp_on(scene, top_frame([0.0, 0.0, 0.04]), cell=(0, 1))
    out = simulate_grasp_outcome(scene, grasp)
    assert out.success == 0
    assert out.reason == "lift_blocked"
    assert out.target == 0
    # same grasp with the small box moved to the table succeeds
    free = Scene([
        (base, RigidTransform(np.eye(3), np.array([0.0, 0.0, 0.02]))),
        (cap, RigidTransform(np.eye(3), np.array([0.12, 0.0, 0.0075]))),
    ], 0.0, "household-3")
    assert simulate_grasp_outcome(free, grasp).success == 1


def test_oracle_is_deterministic():
    scene = box_scene((0.09, 0.04, 0.05))
    grasp, _, _ = grasp_on(scene, top_frame([0.0, 0.0, 0.05]))
    a = simulate_grasp_outcome(scene, grasp)
    b = simulate_grasp_outcome(scene, grasp)
    assert (a.success, a.reason, a.target) == (b.success, b.reason, b.target)
    assert len(a.contacts) == len(b.contacts)
    for ca, cb in zip(a.contacts, b.contacts):
        assert ca.finger == cb.finger
        assert ca.object_index == cb.object_index
        assert np.array_equal(ca.position, cb.position)
        assert np.array_equal(ca.normal, cb.normal)


def test_success_monotone_in_friction():
    half_angle = np.deg2rad(15.0)
    wedge = make_wedge(2.0 * 0.05 * np.tan(half_angle), 0.12, 0.05)
    scenes = [
        (Scene([(wedge, RigidTransform(np.eye(3), np.zeros(3)))], 0.0, "toy-1"),
         top_frame([0.0, 0.0, 0.05]), (6, 1)),
        (box_scene((0.09, 0.04, 0.05)), top_frame([0.0, 0.0, 0.05]), None),
    ]
    for scene, frame, cell in scenes:
        grasp, _, _ = grasp_on(scene, frame, cell=cell)
        qs = [simulate_grasp_outcome(scene, grasp,
                                     oracle=OracleConfig(friction=mu)).success
              for mu in (0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2)]
        assert qs == sorted(qs), f"friction sweep not monotone: {qs}"


def test_oracle_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(friction=0.0)
    with pytest.raises(ValueError):
        OracleConfig(max_travel=-0.01)
    with pytest.raises(ValueError):
        OracleConfig(cone_edges=2)


def test_category_scenes_deterministic():
    a = make_category_scene("toy", 5)
    b = make_category_scene("toy", 5)
    assert a.identifier == b.identifier == "toy-5"
    assert np.array_equal(a.corners, b.corners)
    assert not np.array_equal(a.corners, make_category_scene("toy", 6).corners)
    with pytest.raises(ValueError):
        make_category_scene("unknown", 0)


def test_standard_scene_suite_covers_categories():
    suite = standard_scene_suite(per_category=2, seed=1)
    assert len(suite) == 2 * len(CATEGORY_NAMES)
    prefixes = {s.identifier.split("-")[0] for s in suite}
    assert prefixes == set(CATEGORY_NAMES)


def test_collect_trials_deterministic_and_argmax():
    ds1 = collect_trials(n=10, seed=21)
    ds2 = collect_trials(n=10, seed=21)
    assert len(ds1) == len(ds2) == 10
    assert [r.to_dict() for r in ds1] == [r.to_dict() for r in ds2]
    assert ds1.skipped_scenes == ds2.skipped_scenes
    for i, rec in enumerate(ds1):
        assert rec.timestamp == i
        assert rec.success in (0, 1)
        assert 0 <= rec.type_id < 16
        assert rec.cell == best_antipodal_cell(rec.rep)


def test_collect_counts_ungraspable_scenes():
    graspable = box_scene((0.09, 0.04, 0.05))
    # a giant sphere has no corners to pinch and every chord at reachable
    # depth is wider than the hand opens: no valid cell anywhere
    ball = make_icosphere(0.12, 2)
    hopeless = Scene([(ball, RigidTransform(np.eye(3), np.array([0.0, 0.0, 0.12])))],
                     0.0, "toy-9")

    def source(index):
        return hopeless if index % 2 == 0 else graspable

    ds = collect_trials(n=3, seed=0, scene_source=source)
    assert len(ds) == 3
    assert ds.skipped_scenes >= 3
    assert all(r.scene_id == "toy-0" for r in ds)


def test_trial_record_validation():
    scene = box_scene((0.09, 0.04, 0.05))
    grasp, rep, cell = grasp_on(scene, top_frame([0.0, 0.0, 0.05]))
    with pytest.raises(ValueError):
        TrialRecord("s", rep, cell, 0, 2, grasp, 0)
    bad = next((a, d) for a in range(12) for d in range(5)
               if not np.isfinite(rep.scores[a, d]) or rep.scores[a, d] <= 0)
    with pytest.raises(ValueError):
        TrialRecord("s", rep, bad, 0, 1, grasp, 0)


def test_dataset_roundtrip_exact(tmp_path):
    ds = collect_trials(n=6, seed=4)
    path = tmp_path / "trials.jsonl"
    ds.save(path)
    header = json.loads(path.read_text().splitlines()[0])
    assert header["schema"] == "fingrasp-trials"
    assert header["version"] == 1
    assert header["count"] == 6
    back = TrialDataset.load(path)
    assert back.skipped_scenes == ds.skipped_scenes
    assert back.seed == ds.seed
    for a, b in zip(ds, back):
        assert a.scene_id == b.scene_id
        assert a.cell == b.cell and a.type_id == b.type_id
        assert a.success == b.success and a.timestamp == b.timestamp
        assert np.array_equal(a.rep.scores, b.rep.scores, equal_nan=True)
        assert np.array_equal(a.rep.widths, b.rep.widths, equal_nan=True)
        assert np.array_equal(a.grasp.rotation, b.grasp.rotation)
        assert np.array_equal(a.grasp.translation, b.grasp.translation)
        assert a.grasp.width == b.grasp.width
    # a second save is byte-identical
    path2 = tmp_path / "again.jsonl"
    back.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_load_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"schema": "something-else", "version": 1}\n')
    with pytest.raises(ValueError):
        TrialDataset.load(bad)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(ValueError):
        TrialDataset.load(empty)


def synthetic_records(count, seed=0):
    scene = box_scene((0.09, 0.04, 0.05))
    frame = top_frame([0.0, 0.0, 0.05])
    rep = compute_representation(scene, frame)
    cell = best_antipodal_cell(rep)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        tid = int(rng.integers(16))
        grasp = pose_from_representation(frame, rep, cell, builtin_taxonomy()[tid])
        q = int(rng.integers(2))
        records.append(TrialRecord("toy-0", rep, cell, tid, q, grasp, i))
    return records


def test_split_dataset_partitions():
    records = synthetic_records(30)
    train_split, eval_split = split_dataset(records, eval_count=10, seed=3)
    assert len(train_split) == 20 and len(eval_split) == 10
    ids = lambda rs: sorted(r.timestamp for r in rs)
    assert sorted(ids(train_split) + ids(eval_split)) == list(range(30))
    assert set(ids(train_split)).isdisjoint(ids(eval_split))
    again = split_dataset(records, eval_count=10, seed=3)
    assert ids(again[0]) == ids(train_split) and ids(again[1]) == ids(eval_split)
    other = split_dataset(records, eval_count=10, seed=4)
    assert ids(other[1]) != ids(eval_split)
    with pytest.raises(InsufficientDataError):
        split_dataset(records[:10], eval_count=10)


def test_wilson_interval_bounds():
    # published Wilson 95% interval for 8 successes of 10
    lo, hi = wilson_interval(8, 10)
    assert lo == pytest.approx(0.4902, abs=5e-3)
    assert hi == pytest.approx(0.9433, abs=5e-3)
    assert wilson_interval(0, 0) == (0.0, 1.0)
    lo_big, hi_big = wilson_interval(80, 100)
    assert hi_big - lo_big < hi - lo
    for k, n in ((0, 7), (7, 7), (3, 9)):
        lo, hi = wilson_interval(k, n)
        assert 0.0 <= lo < hi <= 1.0
        assert lo <= k / n <= hi


def test_evaluate_policy_with_rigged_oracle():
    scenes = [box_scene((0.09, 0.04, 0.05), identifier="toy-0"),
              box_scene((0.09, 0.05, 0.04), identifier="snack-1")]
    rigged = lambda *args: TrialOutcome(1, "success")
    report = evaluate_policy(scenes, params=None, seed=0, outcome_fn=rigged)
    assert report.total == 2
    assert report.rate == 1.0
    assert report.per_category == {"toy": [1, 1], "snack": [1, 1]}
    lo, hi = report.interval
    assert 0.0 <= lo < hi <= 1.0
    doc = report.to_dict()
    assert doc["successes"] == 2 and doc["rate"] == 1.0


def test_learning_curve_consistency():
    records = synthetic_records(60, seed=9)
    train_split, eval_split = split_dataset(records, eval_count=20, seed=1)
    cfg = TrainConfig(epochs=3, schedule=((3, 1e-3),))
    rows = learning_curve(train_split, eval_split, sizes=(20, 40), repeats=2,
                          seed=5, train_config=cfg)
    assert [r["size"] for r in rows] == [20, 40]
    again = learning_curve(train_split, eval_split, sizes=(20, 40), repeats=2,
                           seed=5, train_config=cfg)
    assert rows == again
    other = learning_curve(train_split, eval_split, sizes=(20,), repeats=2,
                           seed=6, train_config=cfg)
    assert other[0]["seeds"] != rows[0]["seeds"]
    # full-size run equals a direct train + evaluate with the same seed
    full = learning_curve(train_split, eval_split, sizes=(len(train_split),),
                          repeats=1, seed=5, train_config=cfg)[0]
    direct_cfg = TrainConfig(epochs=3, schedule=((3, 1e-3),),
                             seed=full["seeds"][0])
    direct = train(train_split, direct_cfg).params
    assert full["mean_accuracy"] == classification_accuracy(direct, eval_split)
    with pytest.raises(InsufficientDataError):
        learning_curve(train_split, eval_split, sizes=(10_000,), repeats=1)


def test_report_files(tmp_path):
    records = synthetic_records(40, seed=2)
    train_split, eval_split = split_dataset(records, eval_count=10, seed=0)
    cfg = TrainConfig(epochs=2, schedule=((2, 1e-3),))
    rows = learning_curve(train_split, eval_split, sizes=(15, 30), repeats=1,
                          seed=0, train_config=cfg)
    csv_path = tmp_path / "curve.csv"
    save_learning_curve_csv(rows, csv_path)
    text = csv_path.read_text()
    assert text.splitlines()[0].startswith("size,")
    assert len(text.splitlines()) == 3
    svg_path = tmp_path / "curve.svg"
    save_learning_curve_svg(rows, svg_path)
    assert "<svg" in svg_path.read_text()
    scenes = [box_scene((0.09, 0.04, 0.05), identifier="toy-0")]
    report = evaluate_policy(scenes, params=None, seed=0,
                             outcome_fn=lambda *a: TrialOutcome(1, "success"))
    bars = tmp_path / "bars.svg"
    save_category_bars_svg(report, bars)
    assert "<svg" in bars.read_text()
