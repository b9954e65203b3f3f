"""Multi-finger grasp taxonomy and parametric hand geometry.

Sixteen grasp types: four finger preshapes (pinch, tripod, four-finger,
power) crossed with four depth offsets (0 to 3 cm). Type ids advance
preshape-fastest, so id // 4 is the depth row and id % 4 the preshape.

The hand is five two-segment capsule fingers plus a palm box, posed in the
grasp frame whose x axis is the approach, y the closing axis, z the minor
axis. Engaged fingertips sit with their inner surfaces exactly at +-w/2;
disengaged fingers curl back out of the closing region.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, InfeasibleGraspError
from .representation import GraspFrame, RepGrid


@dataclass(frozen=True)
class FingerSpec:
    name: str
    lengths: tuple[float, float]
    radius: float
    lane: float
    side: int


@dataclass(frozen=True)
class HandModel:
    version: int
    max_opening: float
    sample_spacing: float
    joint_limit: float
    retracted_curl: float
    palm_extents: tuple[float, float, float]
    fingers: tuple[FingerSpec, ...]

    def finger(self, name: str) -> FingerSpec:
        for f in self.fingers:
            if f.name == name:
                return f
        raise ConfigError(f"hand model has no finger named '{name}'")


@dataclass(frozen=True)
class GraspType:
    """One taxonomy entry: a preshape at a depth offset."""

    id: int
    label: str
    engaged: tuple[str, ...]
    joints: tuple[tuple[str, tuple[float, float]], ...]
    thumb_rotation: float
    depth_offset: float

    @property
    def engaged_fingers(self) -> int:
        return len(self.engaged)

    def joint_angles(self, name: str) -> tuple[float, float]:
        return dict(self.joints)[name]


@dataclass
class MultiFingerGrasp:
    """Full grasp: pose, opening width, taxonomy type, and source cell."""

    rotation: np.ndarray
    translation: np.ndarray
    width: float
    type_id: int
    cell: tuple[int, int]
    quality: float | None = None

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6 or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        self.rotation = R
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.width < 0:
            raise ValueError("width must be nonnegative")
        if self.quality is not None and not 0.0 <= self.quality <= 1.0:
            raise ValueError("quality must lie in [0, 1]")

    @property
    def approach(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def closing_axis(self) -> np.ndarray:
        return self.rotation[:, 1]

    def to_dict(self) -> dict:
        return {"rotation": [float(x) for x in self.rotation.reshape(-1)],
                "translation": [float(x) for x in self.translation],
                "width": float(self.width),
                "type_id": int(self.type_id),
                "cell": [int(self.cell[0]), int(self.cell[1])],
                "quality": None if self.quality is None else float(self.quality)}

    @staticmethod
    def from_dict(d: dict) -> "MultiFingerGrasp":
        return MultiFingerGrasp(np.array(d["rotation"]).reshape(3, 3),
                                np.array(d["translation"]), float(d["width"]),
                                int(d["type_id"]), tuple(d["cell"]),
                                d.get("quality"))


def _asset_text(name: str) -> str:
    return resources.files("fingrasp").joinpath("assets", name).read_text("utf-8")


def load_hand(path=None) -> HandModel:
    """Hand model from a JSON file, or the packaged one."""
    text = Path(path).read_text("utf-8") if path is not None else _asset_text("hand_model.json")
    try:
        doc = json.loads(text)
        fingers = tuple(FingerSpec(name, tuple(spec["lengths"]), float(spec["radius"]),
                                   float(spec["lane"]), int(spec["side"]))
                        for name, spec in doc["fingers"].items())
        hand = HandModel(int(doc["version"]), float(doc["max_opening"]),
                         float(doc["sample_spacing"]), float(doc["joint_limit"]),
                         float(doc["retracted_curl"]), tuple(doc["palm_extents"]),
                         fingers)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad hand model file: {exc}") from exc
    if any(l <= 0 for f in hand.fingers for l in f.lengths):
        raise ConfigError("finger segment lengths must be positive")
    if hand.sample_spacing > 0.001:
        raise ConfigError("sample_spacing must be at most 1 mm")
    return hand


def load_taxonomy(path=None, hand: HandModel | None = None) -> tuple[GraspType, ...]:
    """The 16 grasp types from a JSON file, or the packaged taxonomy."""
    text = Path(path).read_text("utf-8") if path is not None else _asset_text("taxonomy.json")
    if hand is None:
        hand = load_hand()
    try:
        doc = json.loads(text)
        coupling = float(doc["coupling"])
        offsets = [float(x) for x in doc["depth_offsets"]]
        preshapes = doc["preshapes"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad taxonomy file: {exc}") from exc
    types = []
    for di, offset in enumerate(offsets):
        for pi, shape in enumerate(preshapes):
            joints = tuple(sorted(
                (name, (float(theta), coupling * float(theta)))
                for name, theta in shape["joints"].items()))
            for name, (t1, t2) in joints:
                if not 0.0 <= t1 <= hand.joint_limit or not 0.0 <= t2 <= hand.joint_limit:
                    raise ConfigError(
                        f"preshape '{shape['label']}' joint {name} outside limits")
            types.append(GraspType(
                id=di * len(preshapes) + pi,
                label=f"{shape['label']}@{offset:.2f}",
                engaged=tuple(shape["engaged"]),
                joints=joints,
                thumb_rotation=float(shape["thumb_rotation"]),
                depth_offset=offset))
    return tuple(types)


@functools.lru_cache(maxsize=1)
def builtin_hand() -> HandModel:
    return load_hand()


@functools.lru_cache(maxsize=1)
def builtin_taxonomy() -> tuple[GraspType, ...]:
    return load_taxonomy()


# ---------------------------------------------------------------------------
# representation cell -> grasp pose
# ---------------------------------------------------------------------------

def pose_from_representation(frame: GraspFrame, rep: RepGrid, cell: tuple[int, int],
                             gtype: GraspType, clearance: float = 0.01,
                             hand: HandModel | None = None) -> MultiFingerGrasp:
    """Grasp pose for one representation cell and one taxonomy type.

    Rotation columns are (approach, closing axis, minor axis); the origin
    sits at the cell's closing depth plus the type's depth offset beyond the
    surface anchor. Contact width wider than the hand opens is infeasible;
    width plus clearance merely exceeding it is clamped.
    """
    if hand is None:
        hand = builtin_hand()
    a, d = cell
    width = rep.widths[a, d]
    if np.isnan(width) or rep.scores[a, d] <= 0.0:
        raise ValueError(f"representation cell {cell} is invalid")
    if width > hand.max_opening:
        raise InfeasibleGraspError(
            f"contact width {width:.4f} m exceeds max opening {hand.max_opening:.4f} m")
    closing = frame.closing_dir(a, rep.config.num_angles)
    R = np.stack([frame.approach, closing, np.cross(frame.approach, closing)], axis=1)
    origin = rep.anchor if rep.anchor is not None else frame.point
    depth = (d + 1) * rep.config.depth_step + gtype.depth_offset
    t = origin + depth * frame.approach
    w = min(width + clearance, hand.max_opening)
    return MultiFingerGrasp(R, t, float(w), gtype.id, (a, d))


# ---------------------------------------------------------------------------
# hand surface geometry
# ---------------------------------------------------------------------------

def hand_geometry(grasp: MultiFingerGrasp, hand: HandModel | None = None,
                  taxonomy: tuple[GraspType, ...] | None = None) -> np.ndarray:
    """Surface point set of the posed, preshaped hand at the grasp's width."""
    if hand is None:
        hand = builtin_hand()
    if taxonomy is None:
        taxonomy = builtin_taxonomy()
    gtype = taxonomy[grasp.type_id]
    pts = hand_local_points(gtype, hand, grasp.width)
    return pts @ grasp.rotation.T + grasp.translation


def hand_local_points(gtype: GraspType, hand: HandModel, width: float) -> np.ndarray:
    """Hand surface points in the grasp frame at the given opening width."""
    static, engaged = _canonical_parts(gtype, hand)
    parts = [static]
    for side, pts in engaged:
        shifted = pts.copy()
        shifted[:, 1] += side * width / 2.0
        parts.append(shifted)
    return np.concatenate(parts)


def hand_bounding_box(gtype: GraspType, hand: HandModel, width: float):
    """Analytic (lo, hi) bounds of the posed hand in the grasp frame."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for p0, p1, r in _capsules(gtype, hand, width):
        lo = np.minimum(lo, np.minimum(p0, p1) - r)
        hi = np.maximum(hi, np.maximum(p0, p1) + r)
    plo, phi = _palm_box(gtype, hand)
    return np.minimum(lo, plo), np.maximum(hi, phi)


def _chain(finger: FingerSpec, theta1: float, theta2: float, rotation: float,
           inner_zero: bool):
    """Capsule endpoints for one finger, tip at the closing plane x = 0.

    With inner_zero the chain is placed so the surface point facing the
    closing line sits exactly at y = 0 (the width shift is added later).
    """
    s = float(finger.side)
    l1, l2 = finger.lengths
    d1 = np.array([np.cos(theta1), -s * np.sin(theta1), 0.0])
    d2 = np.array([np.cos(theta1 + theta2), -s * np.sin(theta1 + theta2), 0.0])
    tip = np.array([0.0, s * finger.radius, 0.0])
    joint = tip - l2 * d2
    base = joint - l1 * d1
    pts = np.stack([base, joint, tip])
    if rotation != 0.0:
        c, sn = np.cos(s * rotation), np.sin(s * rotation)
        rot = np.array([[1.0, 0.0, 0.0], [0.0, c, -sn], [0.0, sn, c]])
        pts = pts @ rot.T
    pts[:, 2] += finger.lane
    if inner_zero:
        # put the inner-most capsule surface exactly on y = 0
        if s > 0:
            pts[:, 1] -= (pts[:, 1].min() - finger.radius)
        else:
            pts[:, 1] -= (pts[:, 1].max() + finger.radius)
    return pts[0], pts[1], pts[2]


def _capsules(gtype: GraspType, hand: HandModel, width: float):
    """All capsule segments (p0, p1, radius) at the given opening width."""
    caps = []
    joints = dict(gtype.joints)
    for finger in hand.fingers:
        if finger.name in gtype.engaged:
            t1, t2 = joints[finger.name]
            rot = gtype.thumb_rotation if finger.name == "thumb" else 0.0
            base, joint, tip = _chain(finger, t1, t2, rot, inner_zero=True)
            shift = np.array([0.0, finger.side * width / 2.0, 0.0])
            caps.append((base + shift, joint + shift, finger.radius))
            caps.append((joint + shift, tip + shift, finger.radius))
        else:
            base, joint, tip = _retracted_chain(finger, hand)
            caps.append((base, joint, finger.radius))
            caps.append((joint, tip, finger.radius))
    return caps


def _retracted_chain(finger: FingerSpec, hand: HandModel):
    """Disengaged fingers fold from a fixed knuckle back against the palm."""
    t1 = hand.retracted_curl
    t2 = 0.7 * t1
    s = float(finger.side)
    l1, l2 = finger.lengths
    d1 = np.array([np.cos(t1), -s * np.sin(t1), 0.0])
    d2 = np.array([np.cos(t1 + t2), -s * np.sin(t1 + t2), 0.0])
    base = np.array([-0.055, s * 0.05, finger.lane])
    joint = base + l1 * d1
    tip = joint + l2 * d2
    return base, joint, tip


def _palm_box(gtype: GraspType, hand: HandModel):
    """Palm box behind every finger base."""
    backs = []
    for p0, _, _ in _capsules(gtype, hand, 0.0):
        backs.append(p0[0])
    front = min(backs) - 0.003
    tx, ty, tz = hand.palm_extents
    lo = np.array([front - tx, -ty / 2.0, -tz / 2.0])
    hi = np.array([front, ty / 2.0, tz / 2.0])
    return lo, hi


@functools.lru_cache(maxsize=64)
def _canonical_parts(gtype: GraspType, hand: HandModel):
    """(static points, [(side, width-zero points) per engaged finger])."""
    h = hand.sample_spacing
    static = []
    engaged = []
    joints = dict(gtype.joints)
    for finger in hand.fingers:
        if finger.name in gtype.engaged:
            t1, t2 = joints[finger.name]
            rot = gtype.thumb_rotation if finger.name == "thumb" else 0.0
            base, joint, tip = _chain(finger, t1, t2, rot, inner_zero=True)
            pts = np.concatenate([_capsule_points(base, joint, finger.radius, h),
                                  _capsule_points(joint, tip, finger.radius, h)])
            engaged.append((finger.side, pts))
        else:
            base, joint, tip = _retracted_chain(finger, hand)
            static.append(_capsule_points(base, joint, finger.radius, h))
            static.append(_capsule_points(joint, tip, finger.radius, h))
    lo, hi = _palm_box(gtype, hand)
    static.append(_box_points(lo, hi, h))
    return np.concatenate(static), engaged


def _capsule_points(p0: np.ndarray, p1: np.ndarray, radius: float,
                    spacing: float) -> np.ndarray:
    axis = p1 - p0
    length = np.linalg.norm(axis)
    u = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    n_th = max(8, int(np.ceil(2.0 * np.pi * radius / spacing)))
    phi = 2.0 * np.pi * np.arange(n_th) / n_th
    ring = radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    n_len = max(2, int(np.ceil(length / spacing)) + 1)
    ts = np.linspace(0.0, length, n_len)
    lateral = (p0[None, None, :] + ts[:, None, None] * u[None, None, :]
               + ring[None, :, :]).reshape(-1, 3)
    caps = []
    n_lat = max(2, int(np.ceil((np.pi / 2.0) * radius / spacing)))
    for center, sign in ((p0, -1.0), (p1, 1.0)):
        for psi in np.linspace(0.0, np.pi / 2.0, n_lat + 1)[1:]:
            rr = radius * np.cos(psi)
            m = max(4, int(np.ceil(2.0 * np.pi * rr / spacing)))
            ph = 2.0 * np.pi * np.arange(m) / m
            caps.append(center + sign * radius * np.sin(psi) * u
                        + rr * (np.cos(ph)[:, None] * e1 + np.sin(ph)[:, None] * e2))
    return np.concatenate([lateral] + caps)


def _box_points(lo: np.ndarray, hi: np.ndarray, spacing: float) -> np.ndarray:
    ext = hi - lo
    counts = np.maximum(2, np.ceil(ext / spacing).astype(int) + 1)
    axes = [np.linspace(lo[i], hi[i], counts[i]) for i in range(3)]
    faces = []
    for fixed in range(3):
        i, j = [k for k in range(3) if k != fixed]
        gi, gj = np.meshgrid(axes[i], axes[j], indexing="ij")
        for val in (lo[fixed], hi[fixed]):
            face = np.empty((gi.size, 3))
            face[:, i] = gi.reshape(-1)
            face[:, j] = gj.reshape(-1)
            face[:, fixed] = val
            faces.append(face)
    return np.concatenate(faces)
