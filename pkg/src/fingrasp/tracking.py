"""Frame-to-frame grasp tracking.

A track anchors on the representation of the grasp chosen in the first
frame, then re-associates it each frame against fresh candidates by
representation similarity inside a spatial gate, exponentially smoothing the
pose toward the matched candidate.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NoFeasibleGraspError, TrackInitError
from .geometry import RigidTransform, save_cloud_ply
from .planner import GraspPlanner, augment_and_pool, sample_grasp_points, select_best
from .representation import (
    GraspFrame,
    RepGrid,
    compute_representation,
    rep_similarity,
    zero_axis_for,
)
from .scenes import Scene, overhead_camera, sample_point_cloud
from .taxonomy import MultiFingerGrasp, pose_from_representation

DEFAULT_GATE = 0.08
DEFAULT_ALPHA = 0.6
MAX_LOST_FRAMES = 3

# 180 degrees about the approach column: the same antipodal closing line
_FLIP = np.diag([1.0, -1.0, -1.0])

# coarse-to-fine (radius, samples) discs re-localizing the anchor each frame
REFINE_ROUNDS = ((0.012, 30), (0.004, 24), (0.0016, 24), (0.0006, 20))

# similarities this close to the best count as tied; discretization noise on
# featureless faces sits around 1e-9, genuine cell mismatches well above 1e-4
SIM_TIE = 1e-6


@dataclass(frozen=True)
class TrackState:
    anchor: RepGrid
    grasp: MultiFingerGrasp
    similarity: float
    frame_index: int
    alpha: float = DEFAULT_ALPHA
    gate: float = DEFAULT_GATE
    lost_count: int = 0
    terminated: bool = False
    patch: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.gate <= 0.0:
            raise ValueError("gate must be positive")
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError("similarity must lie in [0, 1]")


def _sample_cloud(scene: Scene, resolution: int):
    return sample_point_cloud(scene, overhead_camera(scene), resolution)


def _object_points(cloud):
    """Reliable off-plane positions and normals."""
    usable = ~np.asarray(cloud.on_plane) & np.asarray(cloud.reliable)
    positions = np.asarray(cloud.positions, dtype=np.float64)[usable]
    normals = np.asarray(cloud.normals, dtype=np.float64)[usable]
    return positions, normals


def _anchor_point(rep: RepGrid) -> np.ndarray:
    return rep.anchor if rep.anchor is not None else rep.frame.point


def _patch_yaw(prev: np.ndarray, curr: np.ndarray) -> float:
    """Vertical-axis spin between two patches from their horizontal principal
    axes. Zero when either spread is near isotropic (no orientation signal)
    or the turn would exceed the quarter-turn axis ambiguity."""
    axes = []
    for pts in (prev, curr):
        xy = pts[:, :2] - pts[:, :2].mean(axis=0)
        evals, evecs = np.linalg.eigh(xy.T @ xy / len(xy))
        if evals[1] <= 0.0 or (evals[1] - evals[0]) / evals[1] < 0.2:
            return 0.0
        axes.append(evecs[:, 1])
    d = float(axes[0] @ axes[1])
    x = float(axes[0][0] * axes[1][1] - axes[0][1] * axes[1][0])
    if d < 0.0:
        d, x = -d, -x
    yaw = float(np.arctan2(x, d))
    return yaw if abs(yaw) < np.pi / 4 else 0.0


def init_track(scene: Scene, planner: GraspPlanner, cloud=None,
               alpha: float = DEFAULT_ALPHA, gate: float = DEFAULT_GATE,
               cloud_resolution: int = 2500) -> TrackState:
    """Full planner pass on the first frame; the chosen grasp's
    representation becomes the track anchor."""
    if cloud is None:
        cloud = _sample_cloud(scene, cloud_resolution)
    frames = sample_grasp_points(cloud, planner.config.num_grasp_points,
                                 planner.config.seed)
    pooled = augment_and_pool(scene, frames, planner.params, planner.config,
                              rep_config=planner.rep_config, hand=planner.hand,
                              taxonomy=planner.taxonomy)
    try:
        grasp, _ = select_best(pooled, cloud, planner.config.confidence_gate,
                               planner.hand)
    except NoFeasibleGraspError as exc:
        raise TrackInitError(f"no grasp to anchor a track on: {exc}") from exc
    anchor = next(c.rep for c in pooled if c.grasp is grasp)
    points = _object_points(cloud)[0]
    patch = points if len(points) else None
    return TrackState(anchor, grasp, 1.0, 0, alpha, gate, patch=patch)


def _rolled(rep: RepGrid, angle: int) -> RepGrid:
    """The grid re-indexed so the given angle bin becomes row zero."""
    if angle % rep.config.num_angles == 0:
        return rep
    return replace(rep, scores=np.roll(rep.scores, -angle, axis=0),
                   widths=np.roll(rep.widths, -angle, axis=0))


def _rotation_angle(a: np.ndarray, b: np.ndarray) -> float:
    cos = (np.trace(a.T @ b) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def _line_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Rotation distance treating opposite closing directions as one line."""
    return min(_rotation_angle(a, b), _rotation_angle(a, b @ _FLIP))


def associate(anchor: RepGrid, candidates, predicted: np.ndarray,
              gate: float = DEFAULT_GATE, anchor_angle: int | None = None,
              predicted_rotation: np.ndarray | None = None):
    """Match the anchor against (RepGrid, grasp) candidates.

    With ``anchor_angle`` given, similarity is cell-aligned: both grids are
    rolled so their own grasp's angle bin leads, which scores each candidate
    cell as a hypothesis for where the anchor cell moved. Returns
    (index, similarities); index is None when every candidate falls outside
    the spatial gate around the predicted position. Candidates within
    ``SIM_TIE`` of the best similarity count as tied; ties break toward the
    spatially nearest candidate, then the smallest rotation change when
    ``predicted_rotation`` is given.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    predicted = np.asarray(predicted, dtype=np.float64).reshape(3)
    if anchor_angle is None:
        sims = np.array([rep_similarity(anchor, rep) for rep, _ in candidates])
    else:
        ref = _rolled(anchor, int(anchor_angle))
        sims = np.array([rep_similarity(ref, _rolled(rep, g.cell[0]))
                         for rep, g in candidates])
    dists = np.array([np.linalg.norm(g.translation - predicted)
                      for _, g in candidates])
    eligible = np.flatnonzero(dists <= gate)
    if len(eligible) == 0:
        return None, sims
    tied = eligible[sims[eligible] >= sims[eligible].max() - SIM_TIE]
    if predicted_rotation is None:
        spins = np.zeros(len(tied))
    else:
        spins = np.array([_line_angle(predicted_rotation,
                                      candidates[i][1].rotation)
                          for i in tied])
    order = np.lexsort((spins, dists[tied]))
    return int(tied[order[0]]), sims


def _smooth_rotation(old: np.ndarray, new: np.ndarray, alpha: float) -> np.ndarray:
    """Geodesic interpolation from old toward new by fraction alpha."""
    r_old = Rotation.from_matrix(old)
    delta = (r_old.inv() * Rotation.from_matrix(new)).as_rotvec()
    return (r_old * Rotation.from_rotvec(alpha * delta)).as_matrix()


def _ring_offsets(count: int) -> np.ndarray:
    """Unit-disc offsets: the center plus an inner and an outer ring."""
    inner = (count - 1) // 3
    outer = count - 1 - inner
    pts = [np.zeros(2)]
    for n, r in ((inner, 0.5), (outer, 1.0)):
        th = 2.0 * np.pi * np.arange(n) / n
        pts.extend(np.stack([r * np.cos(th), r * np.sin(th)], axis=1))
    return np.asarray(pts)


def _best_roll(ref: RepGrid, rep: RepGrid) -> float:
    """Similarity to the aligned anchor, maximized over angle-bin shifts."""
    return max(rep_similarity(ref, _rolled(rep, k))
               for k in range(rep.config.num_angles))


def _frame_reps(scene: Scene, frames, rep_config):
    pairs = []
    for frame in frames:
        rep = compute_representation(scene, frame, rep_config)
        if not rep.is_empty:
            pairs.append((frame, rep))
    return pairs


def _refine_anchor(scene: Scene, planner: GraspPlanner, ref: RepGrid,
                   basis: GraspFrame, center, positions, normals):
    """Coarse-to-fine disc search for the surface point whose representation
    best aligns with the anchor under some angle-bin shift. Returns the
    final round's (frame, rep) pairs around the peak."""
    if len(positions) == 0:
        return []
    plane = np.stack([basis.zero_axis, basis.binormal])
    pairs = []
    for radius, count in REFINE_ROUNDS:
        points = center[None, :] + (_ring_offsets(count) * radius) @ plane
        round_pairs, sims = [], []
        for p in points:
            i = int(np.argmin(np.linalg.norm(positions - p, axis=1)))
            approach = -normals[i]
            frame = GraspFrame(p, approach, zero_axis_for(approach))
            rep = compute_representation(scene, frame, planner.rep_config)
            if rep.is_empty:
                continue
            round_pairs.append((frame, rep))
            sims.append(_best_roll(ref, rep))
        if not round_pairs:
            break
        pairs = round_pairs
        center = _anchor_point(round_pairs[int(np.argmax(sims))][1])
    return pairs


def _cell_candidates(pairs, planner: GraspPlanner, gtype):
    """One candidate per valid representation cell at the tracked grasp type."""
    out = []
    for frame, rep in pairs:
        valid = (rep.scores > 0.0) & (rep.widths <= planner.hand.max_opening)
        for a, d in np.argwhere(valid):
            grasp = pose_from_representation(frame, rep, (int(a), int(d)),
                                             gtype, hand=planner.hand)
            out.append((rep, grasp))
    return out


def step_track(state: TrackState, scene: Scene, planner: GraspPlanner,
               cloud=None, cloud_resolution: int = 2500) -> TrackState:
    """Advance one frame: regenerate candidates, re-associate, smooth.

    Candidate frames combine a global farthest-point pass with local discs
    refined around the anchor's predicted position, where the prediction
    carries the anchor through the object cloud's centroid shift and
    principal-axis spin. Every valid cell at the anchor's grasp type becomes
    a candidate so association can land on the cell the anchor moved to, not
    just the nearest surface point. The matched pose's closing direction is
    sign-ambiguous on the antipodal line; the branch nearer the previous
    pose is kept.
    """
    if state.terminated:
        raise ValueError("cannot step a terminated track")
    if cloud is None:
        cloud = _sample_cloud(scene, cloud_resolution)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        frames = sample_grasp_points(cloud, planner.config.num_grasp_points,
                                     planner.config.seed)
    positions, normals = _object_points(cloud)
    prev_anchor = _anchor_point(state.anchor)
    guess = prev_anchor
    if state.patch is not None and len(positions):
        ref_mean = state.patch.mean(axis=0)
        yaw = _patch_yaw(state.patch, positions)
        c, s = np.cos(yaw), np.sin(yaw)
        spin = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        guess = positions.mean(axis=0) + spin @ (prev_anchor - ref_mean)
    # predict the next measurement from the anchor, not the smoothed pose,
    # or similarity ties drag the match toward the lagging output
    gtype = next(g for g in planner.taxonomy if g.id == state.grasp.type_id)
    depth = (state.grasp.cell[1] + 1) * planner.rep_config.depth_step \
        + gtype.depth_offset
    predicted = guess + depth * state.anchor.frame.approach
    pairs = _frame_reps(scene, frames, planner.rep_config)
    ref = _rolled(state.anchor, state.grasp.cell[0])
    pairs += _refine_anchor(scene, planner, ref, state.anchor.frame,
                            guess, positions, normals)
    candidates = _cell_candidates(pairs, planner, gtype)
    index = None
    sims = np.zeros(0)
    if candidates:
        index, sims = associate(state.anchor, candidates, predicted,
                                state.gate, anchor_angle=state.grasp.cell[0],
                                predicted_rotation=state.grasp.rotation)
    if index is None:
        lost = state.lost_count + 1
        return replace(state, similarity=0.0, frame_index=state.frame_index + 1,
                       lost_count=lost, terminated=lost >= MAX_LOST_FRAMES)
    rep, matched = candidates[index]
    new_R = matched.rotation
    if _rotation_angle(state.grasp.rotation, new_R @ _FLIP) < \
            _rotation_angle(state.grasp.rotation, new_R):
        new_R = new_R @ _FLIP
    a = state.alpha
    t = a * matched.translation + (1.0 - a) * state.grasp.translation
    R = _smooth_rotation(state.grasp.rotation, new_R, a)
    grasp = MultiFingerGrasp(R, t, matched.width, matched.type_id, matched.cell,
                             quality=matched.quality)
    patch = positions if len(positions) else state.patch
    return TrackState(rep, grasp, float(sims[index]), state.frame_index + 1,
                      state.alpha, state.gate, patch=patch)


# ---------------------------------------------------------------------------
# scripted sequences
# ---------------------------------------------------------------------------

def make_scripted_sequence(scene: Scene, transforms) -> list[Scene]:
    """Per-frame copies of a base scene under absolute rigid transforms."""
    return [scene.transformed(tf) for tf in transforms]


def track_sequence(scenes, planner: GraspPlanner, alpha: float = DEFAULT_ALPHA,
                   gate: float = DEFAULT_GATE,
                   cloud_resolution: int = 2500) -> list[TrackState]:
    """Init on the first scene, step through the rest; stops early when the
    track terminates. Returns the state after every frame."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("sequence must contain at least one frame")
    state = init_track(scenes[0], planner, alpha=alpha, gate=gate,
                       cloud_resolution=cloud_resolution)
    states = [state]
    for scene in scenes[1:]:
        state = step_track(state, scene, planner,
                           cloud_resolution=cloud_resolution)
        states.append(state)
        if state.terminated:
            break
    return states


def export_sequence(scenes, transforms, directory,
                    cloud_resolution: int = 2500) -> None:
    """Dump numbered frame clouds plus the ground-truth transforms."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = []
    for i, (scene, tf) in enumerate(zip(scenes, transforms)):
        cloud = _sample_cloud(scene, cloud_resolution)
        save_cloud_ply(cloud.positions, cloud.normals,
                       directory / f"frame_{i:03d}.ply")
        doc.append({"frame": i, "rotation": tf.rotation.tolist(),
                    "translation": tf.translation.tolist()})
    with open(directory / "transforms.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def load_sequence_transforms(directory) -> list[RigidTransform]:
    with open(Path(directory) / "transforms.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    return [RigidTransform(np.array(row["rotation"]),
                           np.array(row["translation"]))
            for row in sorted(doc, key=lambda r: r["frame"])]


def save_track_log(states, path) -> None:
    """CSV log: frame, translation, quaternion (x,y,z,w), similarity, flags."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "tx", "ty", "tz", "qx", "qy", "qz", "qw",
                         "similarity", "lost_count", "terminated"])
        for s in states:
            q = Rotation.from_matrix(s.grasp.rotation).as_quat()
            writer.writerow([s.frame_index, *np.round(s.grasp.translation, 9),
                             *np.round(q, 9), round(s.similarity, 6),
                             s.lost_count, int(s.terminated)])
