"""Simulated grasp execution: a geometric outcome oracle plus the
trial-and-error data collection, dataset, and evaluation harnesses built on it.

The oracle closes each engaged fingertip along the grasp's closing axis until
it touches something, then asks three questions: did at least two fingers land
on one object, do the contact friction cones achieve force closure, and can
that object move straight up without pressing into a neighbor.
"""

from __future__ import annotations

import dataclasses
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .collision import check_collision, closing_segments, voxelize_hand
from .decision import NetworkParams, TrainConfig, forward_batch, prepare_samples, train
from .errors import (
    InfeasibleGraspError,
    InsufficientDataError,
    NoFeasibleGraspError,
    NoGraspCellError,
    SceneTooDenseError,
)
from .geometry import (
    RigidTransform,
    make_box,
    make_cylinder,
    make_icosphere,
    make_wedge,
    point_triangle_distances,
    sample_mesh_surface,
)
from .planner import GraspPlanner, PlannerConfig, sample_grasp_points
from .representation import RepConfig, RepGrid, best_antipodal_cell, compute_representation
from .scenes import Scene, _penetration, overhead_camera, sample_point_cloud, synthesize_scene
from .taxonomy import (
    HandModel,
    MultiFingerGrasp,
    builtin_hand,
    builtin_taxonomy,
    hand_geometry,
    pose_from_representation,
)

DATASET_SCHEMA = "fingrasp-trials"
DATASET_VERSION = 1
PLANE_ID = -1


@dataclass(frozen=True)
class OracleConfig:
    friction: float = 0.4
    max_travel: float = 0.05
    contact_tolerance: float = 5e-4
    closure_margin: float = 1e-3
    cone_edges: int = 8
    patch_radius: float = 0.005
    lift_height: float = 0.005

    def __post_init__(self):
        if self.friction <= 0:
            raise ValueError("friction must be positive")
        if self.max_travel <= 0:
            raise ValueError("max_travel must be positive")
        if self.cone_edges < 3:
            raise ValueError("cone_edges must be at least 3")
        if self.closure_margin < 0:
            raise ValueError("closure_margin must be nonnegative")


@dataclass(frozen=True)
class Contact:
    finger: str
    position: np.ndarray
    normal: np.ndarray
    object_index: int


@dataclass(frozen=True)
class TrialOutcome:
    success: int
    reason: str
    contacts: tuple[Contact, ...] = ()
    target: int | None = None


# ---------------------------------------------------------------------------
# outcome oracle
# ---------------------------------------------------------------------------

def _tangent_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def _sweep_fingertip(scene: Scene, start: np.ndarray, direction: np.ndarray,
                     radius: float, finger: str, cfg: OracleConfig) -> Contact | None:
    """First contact of a fingertip sphere translated along the closing axis."""
    touch = radius + cfg.contact_tolerance
    end = start + cfg.max_travel * direction
    lo = np.minimum(start, end) - touch - 1e-6
    hi = np.maximum(start, end) + touch + 1e-6
    tri_lo = scene.corners.min(axis=1)
    tri_hi = scene.corners.max(axis=1)
    keep = np.all((tri_hi >= lo) & (tri_lo <= hi), axis=1)
    corners = scene.corners[keep]
    normals = scene.face_normals[keep]
    owners = scene.tri_object[keep]

    def clearance(t: float):
        c = start + t * direction
        mesh_d = np.inf
        tri = -1
        if len(corners):
            d, _, tri_idx = point_triangle_distances(c[None], corners)
            mesh_d, tri = float(d[0]), int(tri_idx[0])
        plane_d = c[2] - scene.plane_height
        return mesh_d, plane_d, tri

    step = 0.001
    ts = np.arange(0.0, cfg.max_travel + step, step)
    prev = 0.0
    hit_t = None
    for t in ts:
        mesh_d, plane_d, _ = clearance(float(t))
        if min(mesh_d, plane_d) <= touch:
            hit_t = float(t)
            break
        prev = float(t)
    if hit_t is None:
        return None
    lo_t, hi_t = prev, hit_t
    for _ in range(24):
        mid = 0.5 * (lo_t + hi_t)
        mesh_d, plane_d, _ = clearance(mid)
        if min(mesh_d, plane_d) <= touch:
            hi_t = mid
        else:
            lo_t = mid
    mesh_d, plane_d, tri = clearance(hi_t)
    center = start + hi_t * direction
    if plane_d <= mesh_d:
        pos = center.copy()
        pos[2] = scene.plane_height
        return Contact(finger, pos, np.array([0.0, 0.0, 1.0]), PLANE_ID)
    d, closest, tri_idx = point_triangle_distances(center[None], corners)
    tri = int(tri_idx[0])
    return Contact(finger, closest[0], normals[tri], int(owners[tri]))


def _wrench_set(contacts, origin: np.ndarray, scale: float,
                cfg: OracleConfig) -> np.ndarray:
    rows = []
    angles = 2.0 * np.pi * np.arange(cfg.cone_edges) / cfg.cone_edges
    for c in contacts:
        inward = -c.normal
        t1, t2 = _tangent_basis(inward)
        arm = (c.position - origin) / scale
        for ang in angles:
            f = inward + cfg.friction * (np.cos(ang) * t1 + np.sin(ang) * t2)
            rows.append(np.concatenate([f, np.cross(arm, f)]))
        # soft-finger torsion about the contact normal
        torsion = cfg.friction * cfg.patch_radius / scale
        for sign in (1.0, -1.0):
            rows.append(np.concatenate([np.zeros(3), sign * torsion * inward]))
    return np.array(rows)


def _closure_margin(wrenches: np.ndarray) -> float:
    """Distance from the origin to the wrench hull boundary (<= 0 outside)."""
    try:
        hull = ConvexHull(wrenches)
    except QhullError:
        return -np.inf
    return float(-hull.equations[:, -1].max())


def _lift_blocked(scene: Scene, target: int, lift: float) -> bool:
    """Would raising the target press it deeper into any other object."""
    meshes = scene.world_meshes
    target_mesh = meshes[target]
    raised = target_mesh.transformed(
        RigidTransform(np.eye(3), np.array([0.0, 0.0, lift])))
    target_pts = sample_mesh_surface(target_mesh, 0.004)[0]
    raised_pts = target_pts + np.array([0.0, 0.0, lift])
    for i, other in enumerate(meshes):
        if i == target:
            continue
        other_pts = sample_mesh_surface(other, 0.004)[0]
        before = max(_penetration(other_pts, target_mesh),
                     _penetration(target_pts, other))
        after = max(_penetration(other_pts, raised),
                    _penetration(raised_pts, other))
        if after > before + 5e-4:
            return True
    return False


def simulate_grasp_outcome(scene: Scene, grasp: MultiFingerGrasp,
                           hand: HandModel | None = None,
                           oracle: OracleConfig | None = None,
                           taxonomy=None) -> TrialOutcome:
    """Deterministic geometric verdict for executing a posed grasp."""
    if hand is None:
        hand = builtin_hand()
    if oracle is None:
        oracle = OracleConfig()
    if taxonomy is None:
        taxonomy = builtin_taxonomy()
    gtype = taxonomy[grasp.type_id]
    R, t = grasp.rotation, grasp.translation
    contacts = []
    for name in gtype.engaged:
        f = hand.finger(name)
        local = np.array([0.0, f.side * (grasp.width / 2.0 + f.radius), f.lane])
        start = R @ local + t
        direction = -f.side * R[:, 1]
        hit = _sweep_fingertip(scene, start, direction, f.radius, name, oracle)
        if hit is not None:
            contacts.append(hit)
    object_contacts = [c for c in contacts if c.object_index != PLANE_ID]
    if not object_contacts:
        return TrialOutcome(0, "no_contact", tuple(contacts), None)
    counts = Counter(c.object_index for c in object_contacts)
    top = max(counts.values())
    target = min(i for i, k in counts.items() if k == top)
    on_target = [c for c in object_contacts if c.object_index == target]
    if len(on_target) < 2:
        return TrialOutcome(0, "too_few_contacts", tuple(contacts), target)
    mesh = scene.world_meshes[target]
    lo, hi = mesh.bounds()
    scale = max(float((hi - lo).max()) / 2.0, 0.01)
    wrenches = _wrench_set(on_target, mesh.centroid(), scale, oracle)
    if _closure_margin(wrenches) < oracle.closure_margin:
        return TrialOutcome(0, "no_force_closure", tuple(contacts), target)
    if _lift_blocked(scene, target, oracle.lift_height):
        return TrialOutcome(0, "lift_blocked", tuple(contacts), target)
    return TrialOutcome(1, "success", tuple(contacts), target)


# ---------------------------------------------------------------------------
# scene categories
# ---------------------------------------------------------------------------

CATEGORY_NAMES = ("hardware", "snack", "ragdoll", "household", "toy", "adversarial")


def _category_library(category: str, rng: np.random.Generator):
    def box(lo, hi):
        return make_box(rng.uniform(lo, hi, size=3))

    if category == "hardware":
        lib = [box((0.018, 0.018, 0.018), (0.035, 0.035, 0.035)),
               make_cylinder(rng.uniform(0.008, 0.014), rng.uniform(0.025, 0.055), 24),
               box((0.012, 0.03, 0.012), (0.022, 0.06, 0.022))]
        count = int(rng.integers(3, 5))
    elif category == "snack":
        lib = [box((0.04, 0.025, 0.015), (0.09, 0.05, 0.03)),
               make_cylinder(rng.uniform(0.018, 0.03), rng.uniform(0.04, 0.09), 32),
               box((0.03, 0.03, 0.03), (0.06, 0.05, 0.06))]
        count = int(rng.integers(2, 4))
    elif category == "ragdoll":
        lib = [make_icosphere(rng.uniform(0.015, 0.03), 2),
               make_cylinder(rng.uniform(0.01, 0.016), rng.uniform(0.06, 0.11), 24),
               make_cylinder(rng.uniform(0.012, 0.02), rng.uniform(0.04, 0.07), 24)]
        count = int(rng.integers(2, 4))
    elif category == "household":
        lib = [box((0.03, 0.03, 0.03), (0.08, 0.06, 0.08)),
               make_cylinder(rng.uniform(0.015, 0.03), rng.uniform(0.05, 0.1), 32),
               make_icosphere(rng.uniform(0.02, 0.03), 2)]
        count = int(rng.integers(2, 4))
    elif category == "toy":
        lib = [make_icosphere(rng.uniform(0.012, 0.028), 2),
               make_wedge(rng.uniform(0.03, 0.06), rng.uniform(0.03, 0.06),
                          rng.uniform(0.02, 0.05)),
               box((0.02, 0.02, 0.02), (0.05, 0.05, 0.05))]
        count = int(rng.integers(2, 4))
    elif category == "adversarial":
        lib = [box((0.03, 0.002, 0.03), (0.07, 0.006, 0.07)),
               make_wedge(rng.uniform(0.02, 0.04), rng.uniform(0.04, 0.07),
                          rng.uniform(0.04, 0.07)),
               box((0.008, 0.04, 0.008), (0.015, 0.09, 0.015))]
        count = int(rng.integers(2, 4))
    else:
        raise ValueError(f"unknown scene category '{category}'")
    return lib, count


def make_category_scene(category: str, seed: int, extent: float = 0.28) -> Scene:
    """Seeded clutter scene from one of the six primitive-mix presets."""
    rng = np.random.default_rng([seed, CATEGORY_NAMES.index(category)])
    library, count = _category_library(category, rng)
    for attempt in range(20):
        try:
            scene = synthesize_scene(library, count, seed + 7919 * attempt, extent)
            break
        except SceneTooDenseError:
            continue
    else:
        raise SceneTooDenseError(f"category '{category}' seed {seed} never placed")
    return Scene(scene.objects, scene.plane_height, f"{category}-{seed}")


def standard_scene_suite(per_category: int = 20, seed: int = 0) -> list[Scene]:
    return [make_category_scene(cat, seed * 1_000_003 + i)
            for cat in CATEGORY_NAMES for i in range(per_category)]


# ---------------------------------------------------------------------------
# trial records and datasets
# ---------------------------------------------------------------------------

@dataclass
class TrialRecord:
    scene_id: str
    rep: RepGrid
    cell: tuple[int, int]
    type_id: int
    success: int
    grasp: MultiFingerGrasp
    timestamp: int
    reason: str = ""

    def __post_init__(self):
        self.cell = (int(self.cell[0]), int(self.cell[1]))
        if self.success not in (0, 1):
            raise ValueError("success must be 0 or 1")
        a, d = self.cell
        if not np.isfinite(self.rep.scores[a, d]) or self.rep.scores[a, d] <= 0:
            raise ValueError(f"cell {self.cell} is invalid in its representation")

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "rep": self.rep.to_dict(),
                "cell": list(self.cell), "type_id": int(self.type_id),
                "success": int(self.success), "grasp": self.grasp.to_dict(),
                "timestamp": int(self.timestamp), "reason": self.reason}

    @staticmethod
    def from_dict(d: dict) -> "TrialRecord":
        return TrialRecord(d["scene_id"], RepGrid.from_dict(d["rep"]),
                           tuple(d["cell"]), int(d["type_id"]), int(d["success"]),
                           MultiFingerGrasp.from_dict(d["grasp"]),
                           int(d["timestamp"]), d.get("reason", ""))


@dataclass
class TrialDataset:
    records: list[TrialRecord] = field(default_factory=list)
    skipped_scenes: int = 0
    seed: int = 0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def success_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.success for r in self.records) / len(self.records)

    def save(self, path) -> None:
        header = {"schema": DATASET_SCHEMA, "version": DATASET_VERSION,
                  "count": len(self.records), "seed": self.seed,
                  "skipped_scenes": self.skipped_scenes}
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True,
                                    separators=(",", ":")) + "\n")

    @staticmethod
    def load(path) -> "TrialDataset":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty dataset file")
        header = json.loads(lines[0])
        if header.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"{path}: not a {DATASET_SCHEMA} file")
        if header.get("version") != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        records = [TrialRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
        return TrialDataset(records, int(header.get("skipped_scenes", 0)),
                            int(header.get("seed", 0)))


def default_scene_source(seed: int):
    """Rotates through the six categories with per-index seeds."""
    def source(index: int) -> Scene:
        category = CATEGORY_NAMES[index % len(CATEGORY_NAMES)]
        return make_category_scene(category, seed * 100_003 + index)
    return source


def _random_policy_grasp(scene: Scene, cloud, type_id: int, frame_seed: int,
                         frames_per_scene: int, rep_config: RepConfig,
                         hand: HandModel, taxonomy):
    """Best-antipodal-cell grasp of a fixed type, or None if nothing fits.

    Frames are ranked by their best cell score; the first whose argmax cell
    yields a feasible, collision-free pose wins.
    """
    frames = sample_grasp_points(cloud, frames_per_scene, frame_seed)
    ranked = []
    for frame in frames:
        rep = compute_representation(scene, frame, rep_config)
        if rep.is_empty:
            continue
        try:
            cell = best_antipodal_cell(rep)
        except NoGraspCellError:
            continue
        ranked.append((float(rep.scores[cell]), len(ranked), frame, rep, cell))
    ranked.sort(key=lambda r: (-r[0], r[1]))
    for _, _, frame, rep, cell in ranked:
        try:
            grasp = pose_from_representation(frame, rep, cell, taxonomy[type_id],
                                             hand=hand)
        except InfeasibleGraspError:
            continue
        grid = voxelize_hand(hand_geometry(grasp, hand, taxonomy))
        collided, _ = check_collision(grid, cloud.positions,
                                      closing_segments(grasp, hand, taxonomy))
        if not collided:
            return grasp, rep, cell
    return None


def collect_trials(n: int = 5000, seed: int = 0, scene_source=None,
                   frames_per_scene: int = 8, cloud_resolution: int = 2500,
                   rep_config: RepConfig | None = None,
                   hand: HandModel | None = None,
                   oracle: OracleConfig | None = None) -> TrialDataset:
    """Trial-and-error collection: per scene, grasp the best antipodal cell
    with a uniformly random hand type and record the simulated outcome."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if scene_source is None:
        scene_source = default_scene_source(seed)
    if rep_config is None:
        rep_config = RepConfig()
    if hand is None:
        hand = builtin_hand()
    if oracle is None:
        oracle = OracleConfig()
    taxonomy = builtin_taxonomy()
    records: list[TrialRecord] = []
    skipped = 0
    index = 0
    while len(records) < n:
        rng = np.random.default_rng([seed, index])
        scene = scene_source(index)
        index += 1
        cloud = sample_point_cloud(scene, overhead_camera(scene), cloud_resolution)
        type_id = int(rng.integers(len(taxonomy)))
        picked = _random_policy_grasp(scene, cloud, type_id,
                                      int(rng.integers(2 ** 31)),
                                      frames_per_scene, rep_config, hand, taxonomy)
        if picked is None:
            skipped += 1
            continue
        grasp, rep, cell = picked
        outcome = simulate_grasp_outcome(scene, grasp, hand, oracle, taxonomy)
        records.append(TrialRecord(scene.identifier, rep, cell, type_id,
                                   outcome.success, grasp, len(records),
                                   outcome.reason))
    return TrialDataset(records, skipped, seed)


def split_dataset(dataset, eval_count: int = 500,
                  seed: int = 0) -> tuple[list[TrialRecord], list[TrialRecord]]:
    records = list(dataset)
    if len(records) <= eval_count:
        raise InsufficientDataError(
            f"need more than {eval_count} records to split, have {len(records)}")
    perm = np.random.default_rng(seed).permutation(len(records))
    eval_idx = set(perm[:eval_count].tolist())
    train_split = [r for i, r in enumerate(records) if i not in eval_idx]
    eval_split = [r for i, r in enumerate(records) if i in eval_idx]
    return train_split, eval_split


# ---------------------------------------------------------------------------
# policy evaluation
# ---------------------------------------------------------------------------

def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    if total == 0:
        return 0.0, 1.0
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * np.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class EvalReport:
    successes: int
    total: int
    per_category: dict
    reasons: dict

    @property
    def rate(self) -> float:
        return self.successes / self.total if self.total else 0.0

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.total)

    def to_dict(self) -> dict:
        lo, hi = self.interval
        return {"successes": self.successes, "total": self.total,
                "rate": self.rate, "ci_low": lo, "ci_high": hi,
                "per_category": {k: list(v) for k, v in self.per_category.items()},
                "reasons": dict(self.reasons)}


def evaluate_policy(scenes, params: NetworkParams | None = None, seed: int = 0,
                    planner_config: PlannerConfig | None = None,
                    frames_per_scene: int = 8, cloud_resolution: int = 2500,
                    oracle: OracleConfig | None = None,
                    hand: HandModel | None = None,
                    outcome_fn=None) -> EvalReport:
    """Grasp every scene once and report the success fraction.

    With trained parameters the full planner picks the grasp; with
    params=None the random-type baseline used during data collection runs
    instead, on the same frame budget.
    """
    if hand is None:
        hand = builtin_hand()
    if oracle is None:
        oracle = OracleConfig()
    if outcome_fn is None:
        outcome_fn = simulate_grasp_outcome
    taxonomy = builtin_taxonomy()
    rep_config = RepConfig()
    scenes = list(scenes)
    successes = 0
    per_category: dict = {}
    reasons: Counter = Counter()
    rng = np.random.default_rng(seed)
    for scene in scenes:
        cloud = sample_point_cloud(scene, overhead_camera(scene), cloud_resolution)
        grasp = None
        if params is None:
            type_id = int(rng.integers(len(taxonomy)))
            picked = _random_policy_grasp(scene, cloud, type_id,
                                          int(rng.integers(2 ** 31)),
                                          frames_per_scene, rep_config, hand,
                                          taxonomy)
            if picked is not None:
                grasp = picked[0]
        else:
            config = planner_config if planner_config is not None else PlannerConfig(
                num_grasp_points=frames_per_scene, top_k=100, augmentations=2,
                seed=int(rng.integers(2 ** 31)))
            planner = GraspPlanner(params, config, rep_config, hand, taxonomy)
            try:
                grasp = planner.plan(scene, cloud).grasp
            except (NoGraspCellError, NoFeasibleGraspError):
                grasp = None
        category = scene.identifier.split("-")[0]
        bucket = per_category.setdefault(category, [0, 0])
        bucket[1] += 1
        if grasp is None:
            reasons["no_feasible_grasp"] += 1
            continue
        outcome = outcome_fn(scene, grasp, hand, oracle, taxonomy)
        reasons[outcome.reason] += 1
        successes += outcome.success
        bucket[0] += outcome.success
    return EvalReport(successes, len(scenes), per_category, dict(reasons))


# ---------------------------------------------------------------------------
# learning curves
# ---------------------------------------------------------------------------

def classification_accuracy(params: NetworkParams, records) -> float:
    """Fraction of executed cells whose predicted probability sides with the
    recorded outcome at threshold 0.5."""
    if not records:
        raise InsufficientDataError("no records to score")
    X, labels = prepare_samples(records)
    probs = forward_batch(params, X)
    idx = labels[:, 0] * 80 + labels[:, 1] * 16 + labels[:, 2]
    p = probs[np.arange(len(probs)), idx]
    return float(np.mean((p >= 0.5) == (labels[:, 3] == 1)))


def _curve_seed(seed: int, size: int, repeat: int) -> int:
    return int(np.random.SeedSequence([seed, size, repeat]).generate_state(1)[0])


def learning_curve(train_records, eval_records,
                   sizes=(100, 500, 1000, 2000, 4500), repeats: int = 3,
                   seed: int = 0, eval_scenes=None,
                   train_config: TrainConfig | None = None,
                   oracle: OracleConfig | None = None) -> list[dict]:
    """Accuracy (and optional simulated success rate) vs training-set size.

    Each size trains `repeats` models on fresh random subsets; size equal to
    the full training set reuses the records as-is so the run matches a
    direct train() call with the same seed.
    """
    train_records = list(train_records)
    rows = []
    for size in sizes:
        if size > len(train_records):
            raise InsufficientDataError(
                f"size {size} exceeds train split of {len(train_records)}")
        accs, rates, seeds = [], [], []
        for rep_i in range(repeats):
            run_seed = _curve_seed(seed, size, rep_i)
            seeds.append(run_seed)
            if size == len(train_records):
                subset = train_records
            else:
                pick = np.random.default_rng(run_seed).choice(
                    len(train_records), size, replace=False)
                subset = [train_records[i] for i in pick]
            cfg = train_config if train_config is not None else TrainConfig()
            cfg = dataclasses.replace(cfg, seed=run_seed)
            params = train(subset, cfg).params
            accs.append(classification_accuracy(params, eval_records))
            if eval_scenes:
                report = evaluate_policy(eval_scenes, params, seed=run_seed,
                                         oracle=oracle)
                rates.append(report.rate)
        row = {"size": int(size), "repeats": repeats, "seeds": seeds,
               "mean_accuracy": float(np.mean(accs)),
               "sd_accuracy": float(np.std(accs)),
               "accuracies": [float(a) for a in accs]}
        if rates:
            row["mean_success_rate"] = float(np.mean(rates))
            row["sd_success_rate"] = float(np.std(rates))
            row["success_rates"] = [float(r) for r in rates]
        rows.append(row)
    return rows


def save_learning_curve_csv(rows, path) -> None:
    import csv

    cols = ["size", "repeats", "mean_accuracy", "sd_accuracy",
            "mean_success_rate", "sd_success_rate"]
    repeats = max((row["repeats"] for row in rows), default=0)
    acc_cols = [f"accuracy_rep{i + 1}" for i in range(repeats)]
    rate_cols = [f"success_rate_rep{i + 1}" for i in range(repeats)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols + acc_cols + rate_cols)
        for row in rows:
            accs = row.get("accuracies", [])
            rates = row.get("success_rates", [])
            cells = [row.get(c, "") for c in cols]
            cells += [accs[i] if i < len(accs) else "" for i in range(repeats)]
            cells += [rates[i] if i < len(rates) else "" for i in range(repeats)]
            writer.writerow(cells)


def load_learning_curve_csv(path) -> list[dict]:
    """Inverse of save_learning_curve_csv for the rendering pipeline."""
    import csv

    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            row = {"size": int(raw["size"]), "repeats": int(raw["repeats"]),
                   "mean_accuracy": float(raw["mean_accuracy"]),
                   "sd_accuracy": float(raw["sd_accuracy"])}
            row["accuracies"] = [float(raw[k]) for k in sorted(raw)
                                 if k.startswith("accuracy_rep") and raw[k]]
            rates = [float(raw[k]) for k in sorted(raw)
                     if k.startswith("success_rate_rep") and raw[k]]
            if raw.get("mean_success_rate"):
                row["mean_success_rate"] = float(raw["mean_success_rate"])
                row["sd_success_rate"] = float(raw["sd_success_rate"])
            if rates:
                row["success_rates"] = rates
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: learning-curve CSV holds no rows")
    return rows


def save_repeat_curves_svg(rows, path) -> None:
    """Accuracy vs training size, one line per repeated run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sizes = [r["size"] for r in rows]
    repeats = max(len(r.get("accuracies", [])) for r in rows)
    if repeats == 0:
        raise ValueError("rows carry no per-repeat accuracies")
    fig, ax = plt.subplots(figsize=(6, 4))
    for i in range(repeats):
        ys = [r["accuracies"][i] for r in rows if i < len(r["accuracies"])]
        xs = [s for s, r in zip(sizes, rows) if i < len(r["accuracies"])]
        ax.plot(xs, ys, marker="o", alpha=0.8, label=f"run {i + 1}")
    ax.set_xlabel("training samples")
    ax.set_ylabel("eval accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def save_learning_curve_svg(rows, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sizes = [r["size"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(sizes, [r["mean_accuracy"] for r in rows],
                yerr=[r["sd_accuracy"] for r in rows], marker="o",
                label="eval accuracy")
    if all("mean_success_rate" in r for r in rows):
        ax.errorbar(sizes, [r["mean_success_rate"] for r in rows],
                    yerr=[r["sd_success_rate"] for r in rows], marker="s",
                    label="grasp success rate")
    ax.set_xlabel("training samples")
    ax.set_ylabel("rate")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_category_bars_svg(report: EvalReport, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cats = sorted(report.per_category)
    rates = [report.per_category[c][0] / max(report.per_category[c][1], 1)
             for c in cats]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(cats, rates)
    ax.set_ylabel("success rate")
    ax.set_ylim(0.0, 1.0)
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
