"""End-to-end grasp selection: sample grasp frames on the observed cloud,
score every representation cell with the decision network, pool candidates
from jittered copies of the scene, reject colliding poses, and return the
highest-confidence survivor."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .collision import EXCLUDE_RADIUS, check_collision, closing_segments, voxelize_hand
from .decision import OUTPUT_SHAPE, NetworkParams, encode_rep, infer_batch
from .errors import NoFeasibleGraspError
from .geometry import RigidTransform, save_cloud_ply
from .representation import GraspFrame, RepConfig, RepGrid, compute_representation, zero_axis_for
from .taxonomy import (
    GraspType,
    HandModel,
    MultiFingerGrasp,
    builtin_hand,
    builtin_taxonomy,
    hand_geometry,
    pose_from_representation,
)


@dataclass(frozen=True)
class PlannerConfig:
    num_grasp_points: int = 512
    top_k: int = 500
    confidence_gate: float = 0.9
    augmentations: int = 10
    max_shift: float = 0.02
    max_yaw: float = np.deg2rad(15.0)
    seed: int = 0

    def __post_init__(self):
        if self.num_grasp_points < 1:
            raise ValueError("num_grasp_points must be at least 1")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if not 0.0 < self.confidence_gate < 1.0:
            raise ValueError("confidence_gate must lie strictly inside (0, 1)")
        if self.augmentations < 0:
            raise ValueError("augmentations must be nonnegative")
        if not 0.0 <= self.max_shift <= 0.02:
            raise ValueError("max_shift must lie in [0, 0.02] m")
        if not 0.0 <= self.max_yaw <= np.deg2rad(15.0) + 1e-12:
            raise ValueError("max_yaw must lie in [0, 15] degrees")


@dataclass(frozen=True)
class Candidate:
    grasp: MultiFingerGrasp
    quality: float
    frame: GraspFrame
    rep: RepGrid


@dataclass
class CandidateSet:
    """Candidates in descending quality, ties kept in generation order."""

    candidates: list[Candidate] = field(default_factory=list)

    def __post_init__(self):
        qs = [c.quality for c in self.candidates]
        if any(a < b for a, b in zip(qs, qs[1:])):
            raise ValueError("candidates must be sorted by descending quality")

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    @property
    def grasps(self) -> list[MultiFingerGrasp]:
        return [c.grasp for c in self.candidates]

    def truncated(self, k: int) -> "CandidateSet":
        return CandidateSet(self.candidates[:k])


def sample_grasp_points(cloud, count: int, seed: int = 0) -> list[GraspFrame]:
    """Farthest-point sampling over reliably-oriented object points.

    Each sampled point becomes a grasp frame approaching along the inward
    surface normal with a deterministic zero-angle completion.
    """
    positions = np.asarray(cloud.positions, dtype=np.float64)
    normals = np.asarray(cloud.normals, dtype=np.float64)
    usable = ~np.asarray(cloud.on_plane) & np.asarray(cloud.reliable)
    positions, normals = positions[usable], normals[usable]
    if len(positions) == 0:
        warnings.warn("no reliable object points to sample grasp frames from")
        return []
    if len(positions) < count:
        warnings.warn(f"only {len(positions)} reliable points for "
                      f"{count} requested grasp frames")
        count = len(positions)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(positions)))]
    dist = np.linalg.norm(positions - positions[chosen[0]], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(positions - positions[nxt], axis=1))
    frames = []
    for i in chosen:
        approach = -normals[i]
        frames.append(GraspFrame(positions[i], approach, zero_axis_for(approach)))
    return frames


def generate_candidates(scene, frames, params: NetworkParams,
                        config: PlannerConfig | None = None,
                        rep_config: RepConfig | None = None,
                        hand: HandModel | None = None,
                        taxonomy: tuple[GraspType, ...] | None = None) -> CandidateSet:
    """Score every valid (angle, depth, type) cell of every frame and keep
    the top_k candidates by predicted success probability."""
    if config is None:
        config = PlannerConfig()
    if rep_config is None:
        rep_config = RepConfig()
    if hand is None:
        hand = builtin_hand()
    if taxonomy is None:
        taxonomy = builtin_taxonomy()
    reps = []
    keep = []
    encoded = []
    for fi, frame in enumerate(frames):
        rep = compute_representation(scene, frame, rep_config)
        reps.append(rep)
        if rep.is_empty:
            continue
        with np.errstate(invalid="ignore"):
            valid = (rep.scores > 0.0) & (rep.widths <= hand.max_opening)
        if not valid.any():
            continue
        keep.append((fi, valid))
        encoded.append(encode_rep(rep))
    entries = []
    if keep:
        # one fused single-precision batch scores every frame at once
        all_probs = infer_batch(params, np.stack(encoded))
        all_probs = all_probs.reshape(-1, *OUTPUT_SHAPE)
        for (fi, valid), probs in zip(keep, all_probs):
            for a, d in np.argwhere(valid):
                for c in range(len(taxonomy)):
                    entries.append((float(probs[a, d, c]), fi, int(a), int(d), c))
    entries.sort(key=lambda e: -e[0])
    chosen = []
    for quality, fi, a, d, c in entries[:config.top_k]:
        rep = reps[fi]
        grasp = pose_from_representation(frames[fi], rep, (a, d), taxonomy[c],
                                         hand=hand)
        grasp.quality = quality
        chosen.append(Candidate(grasp, quality, frames[fi], rep))
    return CandidateSet(chosen)


def _perturbations(config: PlannerConfig, count: int) -> list[RigidTransform]:
    rng = np.random.default_rng(config.seed)
    out = []
    for _ in range(count):
        yaw = rng.uniform(-config.max_yaw, config.max_yaw)
        # in-plane jitter keeps the support plane where the scene says it is
        shift = rng.uniform(-config.max_shift, config.max_shift, size=2)
        out.append(RigidTransform.from_yaw(yaw, translation=(*shift, 0.0)))
    return out


def augment_and_pool(scene, frames, params: NetworkParams,
                     config: PlannerConfig | None = None,
                     count: int | None = None,
                     rep_config: RepConfig | None = None,
                     hand: HandModel | None = None,
                     taxonomy: tuple[GraspType, ...] | None = None) -> CandidateSet:
    """Merge candidates from the scene and `count` jittered copies of it.

    Each jittered pass re-derives the frame zero axes from the rotated
    approach directions, so the angular bins land differently and surface new
    proposals; resulting poses are mapped back into the original scene.
    """
    if config is None:
        config = PlannerConfig()
    if count is None:
        count = config.augmentations
    pooled = list(generate_candidates(scene, frames, params, config,
                                      rep_config, hand, taxonomy))
    for T in _perturbations(config, count):
        inv = T.inverse()
        moved_scene = scene.transformed(T)
        moved_frames = []
        for f in frames:
            approach = T.apply_vector(f.approach)
            moved_frames.append(GraspFrame(T.apply(f.point), approach,
                                           zero_axis_for(approach)))
        passes = generate_candidates(moved_scene, moved_frames, params, config,
                                     rep_config, hand, taxonomy)
        for cand in passes:
            g = cand.grasp
            back = MultiFingerGrasp(inv.rotation @ g.rotation, inv.apply(g.translation),
                                    g.width, g.type_id, g.cell, g.quality)
            back_frame = GraspFrame(inv.apply(cand.frame.point),
                                    inv.apply_vector(cand.frame.approach),
                                    inv.apply_vector(cand.frame.zero_axis))
            pooled.append(Candidate(back, cand.quality, back_frame, cand.rep))
    pooled.sort(key=lambda c: -c.quality)
    return CandidateSet(pooled)


def select_best(candidates: CandidateSet, cloud,
                gate: float = 0.9, hand: HandModel | None = None,
                exclude_radius: float = EXCLUDE_RADIUS) -> tuple[MultiFingerGrasp, bool]:
    """Best collision-free grasp and whether it fell below the confidence gate.

    Candidates arrive in descending quality, so the first collision-free one
    is the best survivor; the walk stops there instead of filtering the whole
    set. The gate only sets the flag: when nothing clears it the best survivor
    is still returned rather than failing the plan.
    """
    if len(candidates) == 0:
        raise NoFeasibleGraspError("no candidates to select from")
    hand = hand if hand is not None else builtin_hand()
    taxonomy = builtin_taxonomy()
    for cand in candidates:
        grasp = cand.grasp
        grid = voxelize_hand(hand_geometry(grasp, hand, taxonomy))
        segments = closing_segments(grasp, hand, taxonomy)
        collided, _ = check_collision(grid, cloud, segments, exclude_radius)
        if not collided:
            return grasp, bool(grasp.quality < gate)
    raise NoFeasibleGraspError(
        f"all {len(candidates)} candidates collide with the scene")


@dataclass
class GraspPlan:
    grasp: MultiFingerGrasp
    below_gate: bool
    num_candidates: int

    def to_dict(self) -> dict:
        d = self.grasp.to_dict()
        d["below_gate"] = self.below_gate
        d["num_candidates"] = self.num_candidates
        return d

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @staticmethod
    def load(path) -> "GraspPlan":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return GraspPlan(MultiFingerGrasp.from_dict(d), bool(d["below_gate"]),
                         int(d["num_candidates"]))


class GraspPlanner:
    """Bundles trained parameters with the full plan pipeline."""

    def __init__(self, params: NetworkParams, config: PlannerConfig | None = None,
                 rep_config: RepConfig | None = None,
                 hand: HandModel | None = None, taxonomy=None):
        self.params = params
        self.config = config if config is not None else PlannerConfig()
        self.rep_config = rep_config if rep_config is not None else RepConfig()
        self.hand = hand if hand is not None else builtin_hand()
        self.taxonomy = taxonomy if taxonomy is not None else builtin_taxonomy()

    def plan(self, scene, cloud) -> GraspPlan:
        frames = sample_grasp_points(cloud, self.config.num_grasp_points,
                                     self.config.seed)
        pooled = augment_and_pool(scene, frames, self.params, self.config,
                                  rep_config=self.rep_config, hand=self.hand,
                                  taxonomy=self.taxonomy)
        grasp, below = select_best(pooled, cloud, self.config.confidence_gate,
                                   self.hand)
        return GraspPlan(grasp, below, len(pooled))


def save_hand_ply(grasp: MultiFingerGrasp, path,
                  hand: HandModel | None = None) -> None:
    """Dump the posed hand surface points for external viewers."""
    from .taxonomy import hand_geometry

    pts = hand_geometry(grasp, hand)
    normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    save_cloud_ply(pts, normals, path)
