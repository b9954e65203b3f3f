"""Circular antipodal surface representation.

For a grasp frame (point on a surface, approach direction, in-plane zero
axis) the representation is an A x D grid. Bin (a, d) describes the contact
pair found by closing a parallel jaw along the line at angle a*pi/A in the
plane perpendicular to the approach, centered (d+1)*depth_step beyond the
first surface hit along the approach. Score encodes the friction ladder rung
needed for both contacts to be inside their friction cones; width is the
contact separation. Cells without a usable pair are invalid (NaN width,
score 0).

`brute_force_representation` recomputes the grid with an unrelated
intersection method and exhaustive pair enumeration, as a test oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoGraspCellError
from .geometry import line_hits_all, normalized
from .scenes import Scene, cast_rays_pruned

ANCHOR_BACKOFF = 0.006  # cast starts this far behind the grasp point
ANCHOR_WINDOW = 0.012   # surface must lie within the cast window

DEFAULT_LADDER = tuple(round(0.1 * k, 1) for k in range(1, 11))


@dataclass(frozen=True)
class RepConfig:
    num_angles: int = 12
    num_depths: int = 5
    depth_step: float = 0.01
    max_width: float = 0.10
    friction_ladder: tuple = DEFAULT_LADDER

    def __post_init__(self):
        if self.num_angles < 2:
            raise ValueError("num_angles must be >= 2")
        if self.num_depths < 1:
            raise ValueError("num_depths must be >= 1")
        lad = tuple(float(x) for x in self.friction_ladder)
        if not lad or lad[0] <= 0 or any(b <= a for a, b in zip(lad, lad[1:])):
            raise ValueError("friction ladder must be ascending and positive")
        object.__setattr__(self, "friction_ladder", lad)

    def to_dict(self) -> dict:
        return {"num_angles": self.num_angles, "num_depths": self.num_depths,
                "depth_step": self.depth_step, "max_width": self.max_width,
                "friction_ladder": list(self.friction_ladder)}

    @staticmethod
    def from_dict(d: dict) -> "RepConfig":
        return RepConfig(int(d["num_angles"]), int(d["num_depths"]),
                         float(d["depth_step"]), float(d["max_width"]),
                         tuple(d["friction_ladder"]))


@dataclass(frozen=True)
class GraspFrame:
    """Grasp point with an approach direction pointing into the surface and
    a zero axis fixing angle bin 0 in the closing plane."""

    point: np.ndarray
    approach: np.ndarray
    zero_axis: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=np.float64).reshape(3)
        v = np.asarray(self.approach, dtype=np.float64).reshape(3)
        e = np.asarray(self.zero_axis, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9 or abs(np.linalg.norm(e) - 1.0) > 1e-9:
            raise ValueError("approach and zero_axis must be unit vectors")
        if abs(v @ e) > 1e-9:
            raise ValueError("zero_axis must be orthogonal to approach")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "approach", v)
        object.__setattr__(self, "zero_axis", e)

    @property
    def binormal(self) -> np.ndarray:
        return np.cross(self.approach, self.zero_axis)

    def closing_dir(self, angle_idx: int, num_angles: int) -> np.ndarray:
        th = angle_idx * np.pi / num_angles
        return np.cos(th) * self.zero_axis + np.sin(th) * self.binormal


def zero_axis_for(approach) -> np.ndarray:
    """Deterministic zero axis for an approach direction.

    For non-vertical approaches the axis is horizontal (z cross approach), so
    yawing the world about z yaws the axis with it. Near-vertical approaches
    fall back to a fixed reference.
    """
    v = normalized(approach)
    if abs(v[2]) <= 0.99:
        return normalized(np.cross([0.0, 0.0, 1.0], v))
    return normalized(np.cross([1.0, 0.0, 0.0], v))


@dataclass
class RepGrid:
    """Scores in [0, 1] and widths in meters on the A x D bin grid.

    Invalid cells carry width NaN and score 0; a cell is invalid exactly when
    its score is 0.
    """

    scores: np.ndarray
    widths: np.ndarray
    frame: GraspFrame
    config: RepConfig
    anchor: np.ndarray | None = None

    def __post_init__(self):
        A, D = self.config.num_angles, self.config.num_depths
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(A, D)
        self.widths = np.asarray(self.widths, dtype=np.float64).reshape(A, D)
        invalid = np.isnan(self.widths)
        zero = self.scores == 0.0
        if not np.array_equal(invalid, zero):
            raise ValueError("cells must have score 0 exactly when width is invalid")
        valid = ~invalid
        if np.any(self.widths[valid] < 0) or np.any(self.widths[valid] > self.config.max_width + 1e-12):
            raise ValueError("valid widths must lie in [0, max_width]")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ValueError("scores must lie in [0, 1]")

    @property
    def is_empty(self) -> bool:
        return not np.any(self.scores > 0.0)

    def to_dict(self) -> dict:
        widths = [None if np.isnan(w) else float(w) for w in self.widths.reshape(-1)]
        return {
            "num_angles": self.config.num_angles,
            "num_depths": self.config.num_depths,
            "scores": [float(s) for s in self.scores.reshape(-1)],
            "widths": widths,
            "config": self.config.to_dict(),
            "frame": {"point": self.frame.point.tolist(),
                      "approach": self.frame.approach.tolist(),
                      "zero_axis": self.frame.zero_axis.tolist()},
            "anchor": None if self.anchor is None else list(map(float, self.anchor)),
        }

    @staticmethod
    def from_dict(d: dict) -> "RepGrid":
        cfg = RepConfig.from_dict(d["config"])
        A, D = cfg.num_angles, cfg.num_depths
        scores = np.array(d["scores"], dtype=np.float64).reshape(A, D)
        widths = np.array([np.nan if w is None else w for w in d["widths"]],
                          dtype=np.float64).reshape(A, D)
        fr = d["frame"]
        frame = GraspFrame(np.array(fr["point"]), np.array(fr["approach"]),
                           np.array(fr["zero_axis"]))
        anchor = None if d.get("anchor") is None else np.array(d["anchor"])
        return RepGrid(scores, widths, frame, cfg, anchor)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path) -> "RepGrid":
        with open(Path(path), "r", encoding="utf-8") as fh:
            return RepGrid.from_dict(json.load(fh))


def empty_grid(frame: GraspFrame, config: RepConfig) -> RepGrid:
    A, D = config.num_angles, config.num_depths
    return RepGrid(np.zeros((A, D)), np.full((A, D), np.nan), frame, config, None)


# ---------------------------------------------------------------------------
# analytic engine
# ---------------------------------------------------------------------------

def compute_representation(scene: Scene, frame: GraspFrame,
                           config: RepConfig = RepConfig()) -> RepGrid:
    """Exact grid from scene geometry by casting each bin's closing line.

    A frame whose approach ray misses every surface within the anchor window
    yields an all-invalid grid.
    """
    anchor = _find_anchor(scene, frame)
    if anchor is None:
        return empty_grid(frame, config)
    corners, normals = _pruned_geometry(scene, anchor, config)
    A, D = config.num_angles, config.num_depths
    th = np.arange(A) * np.pi / A
    dirs_a = (np.cos(th)[:, None] * frame.zero_axis[None, :]
              + np.sin(th)[:, None] * frame.binormal[None, :])
    depths = (np.arange(D) + 1) * config.depth_step
    centers_d = anchor[None, :] + depths[:, None] * frame.approach[None, :]
    # line index a*D + d
    origins = np.repeat(centers_d[None, :, :], A, axis=0).reshape(A * D, 3)
    dirs = np.repeat(dirs_a, D, axis=0)
    hits = line_hits_all(origins, dirs, corners, normals)
    scores = np.zeros((A, D))
    widths = np.full((A, D), np.nan)
    for a in range(A):
        for d in range(D):
            ts, ns = hits[a * D + d]
            s, w = _close_jaws(ts, ns, dirs_a[a], config)
            scores[a, d] = s
            widths[a, d] = w
    return RepGrid(scores, widths, frame, config, anchor)


def _find_anchor(scene: Scene, frame: GraspFrame) -> np.ndarray | None:
    origin = frame.point - ANCHOR_BACKOFF * frame.approach
    t, _ = cast_rays_pruned(scene, origin[None, :], frame.approach[None, :])
    if not np.isfinite(t[0]) or t[0] > ANCHOR_WINDOW:
        return None
    return origin + t[0] * frame.approach


def _pruned_geometry(scene: Scene, anchor: np.ndarray, config: RepConfig):
    """Triangles whose bounding box meets the ball every closing line stays in."""
    radius = (config.max_width / 2.0
              + (config.num_depths + 1) * config.depth_step + 0.005)
    corners = scene.corners
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    keep = np.all((hi >= anchor - radius) & (lo <= anchor + radius), axis=1)
    return corners[keep], scene.face_normals[keep]


def _close_jaws(ts: np.ndarray, ns: np.ndarray, c_dir: np.ndarray,
                config: RepConfig):
    """Sweep two jaws inward from +-max_width/2; score the pair they stop at."""
    if len(ts) == 0:
        return 0.0, np.nan
    half = config.max_width / 2.0
    side = ns @ c_dir
    window = np.abs(ts) <= half + 1e-12
    left = window & (side < -1e-9)
    right = window & (side > 1e-9)
    if not left.any() or not right.any():
        return 0.0, np.nan
    t_l = ts[left].min()
    t_r = ts[right].max()
    width = t_r - t_l
    if width <= 1e-9 or width > config.max_width + 1e-12:
        return 0.0, np.nan
    # hits tied in t (shared edges, coincident faces): take the best-aligned
    cos_l = np.max(-side[left & (ts <= t_l + 1e-9)])
    cos_r = np.max(side[right & (ts >= t_r - 1e-9)])
    c = min(cos_l, cos_r)
    if c <= 0.0:
        return 0.0, np.nan
    tan_alpha = np.sqrt(max(0.0, 1.0 - c * c)) / c
    for mu in config.friction_ladder:
        if tan_alpha <= mu + 1e-12:
            return float(np.clip(1.1 - mu, 0.0, 1.0)), float(width)
    return 0.0, np.nan


# ---------------------------------------------------------------------------
# independent brute-force oracle
# ---------------------------------------------------------------------------

def brute_force_representation(scene: Scene, frame: GraspFrame,
                               config: RepConfig = RepConfig()) -> RepGrid:
    """Same contract as compute_representation, different machinery.

    Intersections come from plane parameters plus an edge-side containment
    test, with no pruning, and the contact pair is found by enumerating all
    left/right hit pairs and taking the widest.
    """
    corners = scene.corners
    v = frame.approach
    e0 = frame.zero_axis
    b = np.cross(v, e0)
    anchor = _oracle_anchor(corners, frame)
    if anchor is None:
        return empty_grid(frame, config)
    A, D = config.num_angles, config.num_depths
    scores = np.zeros((A, D))
    widths = np.full((A, D), np.nan)
    for a in range(A):
        th = a * np.pi / A
        c_dir = np.cos(th) * e0 + np.sin(th) * b
        for d in range(D):
            center = anchor + (d + 1) * config.depth_step * v
            ts, cosines = _oracle_crossings(corners, center, c_dir)
            scores[a, d], widths[a, d] = _oracle_pair(ts, cosines, config)
    return RepGrid(scores, widths, frame, config, anchor)


def _oracle_crossings(corners: np.ndarray, origin: np.ndarray, direction: np.ndarray):
    """All line-triangle crossings: t values and cos(angle to line) per face."""
    p0, p1, p2 = corners[:, 0], corners[:, 1], corners[:, 2]
    n = np.cross(p1 - p0, p2 - p0)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    denom = n @ direction
    ok = np.abs(denom) > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.einsum("tj,tj->t", n, p0 - origin) / denom
        t = np.where(ok, t, 0.0)
        pts = origin[None, :] + t[:, None] * direction[None, :]
        for va, vb in ((p0, p1), (p1, p2), (p2, p0)):
            edge_side = np.einsum("tj,tj->t", np.cross(vb - va, pts - va), n)
            ok &= edge_side >= -1e-12
    return t[ok], denom[ok]


def _oracle_pair(ts: np.ndarray, cosines: np.ndarray, config: RepConfig):
    half = config.max_width / 2.0
    inside = np.abs(ts) <= half + 1e-12
    ts, cosines = ts[inside], cosines[inside]
    lefts = [(t, -c) for t, c in zip(ts, cosines) if c < -1e-9]
    rights = [(t, c) for t, c in zip(ts, cosines) if c > 1e-9]
    best = None
    for tl, cl in lefts:
        for tr, cr in rights:
            if tr - tl <= 1e-9:
                continue
            cand = (tr - tl, min(cl, cr))
            if best is None or cand[0] > best[0] + 1e-9 \
                    or (abs(cand[0] - best[0]) <= 1e-9 and cand[1] > best[1]):
                best = cand
    if best is None or best[0] > config.max_width + 1e-12:
        return 0.0, np.nan
    width, cos_pair = best
    cos_pair = min(cos_pair, 1.0)
    if cos_pair <= 0.0:
        return 0.0, np.nan
    alpha = np.arccos(cos_pair)
    for mu in config.friction_ladder:
        if alpha <= np.arctan(mu) + 1e-12:
            return float(np.clip(1.1 - mu, 0.0, 1.0)), float(width)
    return 0.0, np.nan


def _oracle_anchor(corners: np.ndarray, frame: GraspFrame) -> np.ndarray | None:
    origin = frame.point - ANCHOR_BACKOFF * frame.approach
    ts, _ = _oracle_crossings(corners, origin, frame.approach)
    ahead = ts[(ts > 1e-9) & (ts <= ANCHOR_WINDOW)]
    if len(ahead) == 0:
        return None
    return origin + ahead.min() * frame.approach


# ---------------------------------------------------------------------------
# grid consumers
# ---------------------------------------------------------------------------

def best_antipodal_cell(rep: RepGrid) -> tuple[int, int]:
    """Argmax cell; ties go to the lower depth index, then lower angle index."""
    if rep.is_empty:
        raise NoGraspCellError("all representation cells are invalid")
    best = rep.scores.max()
    for d in range(rep.config.num_depths):
        for a in range(rep.config.num_angles):
            if rep.scores[a, d] == best:
                return a, d
    raise AssertionError("unreachable")


def rep_similarity(a: RepGrid, b: RepGrid) -> float:
    """Cosine of the stacked [scores, widths/max_width] vectors in [0, 1]."""
    if a.config.num_angles != b.config.num_angles \
            or a.config.num_depths != b.config.num_depths:
        raise ValueError("grids must share A and D")

    def vec(g: RepGrid) -> np.ndarray:
        w = np.nan_to_num(g.widths / g.config.max_width, nan=0.0)
        return np.concatenate([g.scores.reshape(-1), w.reshape(-1)])

    va, vb = vec(a), vec(b)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    cos = float(va @ vb / (na * nb))
    return (np.clip(cos, -1.0, 1.0) + 1.0) / 2.0
