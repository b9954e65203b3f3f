"""Voxel occupancy collision tests between posed hands and scene clouds.

The hand surface point set is snapped into a voxel grid; a candidate grasp is
rejected when any scene point falls inside an occupied voxel, except points
near an engaged finger's closing segment, where contact is the whole point of
the grasp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .taxonomy import HandModel, MultiFingerGrasp, builtin_hand, builtin_taxonomy, hand_geometry

VOXEL_SIZE = 0.003
EXCLUDE_RADIUS = 0.015


@dataclass(frozen=True)
class VoxelGrid:
    """Axis-aligned occupancy grid anchored at the source point set's minimum
    corner, so voxel indices are always nonnegative."""

    origin: np.ndarray
    size: float
    indices: np.ndarray

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("voxel size must be positive")
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        if len(idx) and idx.min() < 0:
            raise ValueError("voxel indices must be nonnegative")
        dims = idx.max(axis=0) + 1 if len(idx) else np.ones(3, dtype=np.int64)
        # dedup through the packed key: one flat sort instead of a row sort
        packed = np.unique((idx[:, 0] * dims[1] + idx[:, 1]) * dims[2] + idx[:, 2])
        idx = np.stack([packed // (dims[1] * dims[2]),
                        (packed // dims[2]) % dims[1],
                        packed % dims[2]], axis=1)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "_dims", dims)
        object.__setattr__(self, "_packed", packed)

    @property
    def occupied(self) -> frozenset:
        return frozenset(map(tuple, self.indices.tolist()))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask: which points fall inside an occupied voxel."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        rel = np.floor((points - self.origin) / self.size).astype(np.int64)
        dims = self._dims
        in_box = np.all((rel >= 0) & (rel < dims), axis=1)
        out = np.zeros(len(points), dtype=bool)
        if not in_box.any():
            return out
        sub = rel[in_box]
        packed = (sub[:, 0] * dims[1] + sub[:, 1]) * dims[2] + sub[:, 2]
        out[in_box] = np.isin(packed, self._packed)
        return out

    def centers(self) -> np.ndarray:
        return self.origin + (self.indices + 0.5) * self.size

    def save_ply(self, path) -> None:
        """Debug dump of occupied voxel centers as an oriented point cloud."""
        from .geometry import save_cloud_ply

        centers = self.centers()
        normals = np.tile([0.0, 0.0, 1.0], (len(centers), 1))
        save_cloud_ply(centers, normals, path)


def voxelize_hand(points: np.ndarray, voxel_size: float = VOXEL_SIZE) -> VoxelGrid:
    """Snap a posed hand surface point set into an occupancy grid."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("cannot voxelize an empty point set")
    origin = points.min(axis=0)
    idx = np.floor((points - origin) / voxel_size).astype(np.int64)
    return VoxelGrid(origin, voxel_size, idx)


def closing_segments(grasp: MultiFingerGrasp, hand: HandModel | None = None,
                     taxonomy=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """World-frame closing segment of each engaged finger.

    Fingertip centers travel along the closing axis in the x = 0 plane of the
    grasp frame, one lane per finger; scene points near these segments are
    intended contacts rather than collisions.
    """
    if hand is None:
        hand = builtin_hand()
    if taxonomy is None:
        taxonomy = builtin_taxonomy()
    gtype = taxonomy[grasp.type_id]
    half = hand.max_opening / 2.0
    segments = []
    for name in gtype.engaged:
        lane = hand.finger(name).lane
        lo = grasp.rotation @ np.array([0.0, -half, lane]) + grasp.translation
        hi = grasp.rotation @ np.array([0.0, half, lane]) + grasp.translation
        segments.append((lo, hi))
    return segments


def _segment_distances(points: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    d = p1 - p0
    denom = float(d @ d)
    if denom == 0.0:
        return np.linalg.norm(points - p0, axis=1)
    t = np.clip((points - p0) @ d / denom, 0.0, 1.0)
    return np.linalg.norm(points - (p0 + t[:, None] * d), axis=1)


def check_collision(grid: VoxelGrid, cloud, exclude_segments=(),
                    exclude_radius: float = EXCLUDE_RADIUS) -> tuple[bool, int]:
    """Collision verdict plus the number of intended-contact points.

    A scene point inside an occupied voxel counts as a collision unless it
    lies within `exclude_radius` of one of the closing segments; those points
    are returned as the contact count instead.
    """
    points = _positions(cloud)
    if len(points) == 0:
        return False, 0
    inside = grid.contains(points)
    if not inside.any():
        return False, 0
    near = np.zeros(len(points), dtype=bool)
    if exclude_radius > 0:
        for p0, p1 in exclude_segments:
            near |= _segment_distances(points, p0, p1) < exclude_radius
    contacts = int(np.count_nonzero(inside & near))
    return bool(np.any(inside & ~near)), contacts


def batch_filter(candidates, cloud, hand: HandModel | None = None, *,
                 voxel_size: float = VOXEL_SIZE,
                 exclude_radius: float = EXCLUDE_RADIUS) -> list[MultiFingerGrasp]:
    """Order-preserving filter keeping only collision-free grasps.

    Each candidate is checked independently against the same immutable cloud,
    so the loop is safe to parallelize if it ever becomes the bottleneck.
    """
    if hand is None:
        hand = builtin_hand()
    taxonomy = builtin_taxonomy()
    points = _positions(cloud)
    survivors = []
    for grasp in candidates:
        grid = voxelize_hand(hand_geometry(grasp, hand, taxonomy), voxel_size)
        segments = closing_segments(grasp, hand, taxonomy)
        collided, _ = check_collision(grid, points, segments, exclude_radius)
        if not collided:
            survivors.append(grasp)
    return survivors


def _positions(cloud) -> np.ndarray:
    pts = getattr(cloud, "positions", cloud)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)
