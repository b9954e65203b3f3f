"""Geometry foundation: rigid transforms, triangle meshes, ray casting.

All quantities are in meters. Mesh loaders take an explicit scale factor so
files authored in other units convert exactly once, at the boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MeshFormatError

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation not orthonormal (max error {err:.3g})")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation about world +z by `angle`, then translate."""
        c, s = np.cos(angle), np.sin(angle)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return RigidTransform(R, np.asarray(translation, dtype=np.float64))

    @staticmethod
    def rotation_about_axis(axis_point, axis_dir, angle: float) -> "RigidTransform":
        """Rotation by `angle` about the line through axis_point along axis_dir."""
        p = np.asarray(axis_point, dtype=np.float64)
        R = _axis_angle_matrix(np.asarray(axis_dir, dtype=np.float64), angle)
        return RigidTransform(R, p - R @ p)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def apply_vector(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: (a @ b).apply(x) == a.apply(b.apply(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    a = axis / np.linalg.norm(axis)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def normalized(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


@dataclass
class SurfacePoint:
    """A point on an object surface with its outward unit normal."""

    position: np.ndarray
    normal: np.ndarray
    reliable: bool = True


@dataclass
class TriMesh:
    """Indexed triangle mesh with per-face outward normals.

    Degenerate (zero-area) faces are dropped at construction and counted in
    `degenerate_count`. If the mesh is watertight and its signed volume is
    negative, the winding of every face is flipped so normals point outward.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    face_normals: np.ndarray = field(default=None, repr=False)
    watertight: bool = field(default=False)
    degenerate_count: int = 0

    def __post_init__(self):
        V = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        F = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("triangle index out of range")
        # drop degenerate faces before anything else
        cross = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
        area2 = np.linalg.norm(cross, axis=1)
        good = area2 > 1e-14
        self.degenerate_count = int((~good).sum())
        F = F[good]
        cross = cross[good]
        self.vertices = V
        self.triangles = F
        self.watertight = _is_watertight(F)
        if self.watertight and _signed_volume(V, F) < 0.0:
            F = F[:, ::-1].copy()
            cross = -cross
            self.triangles = F
        self.face_normals = cross / np.linalg.norm(cross, axis=1)[:, None]

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) world triangle corner array."""
        return self.vertices[self.triangles]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, pose: RigidTransform) -> "TriMesh":
        m = TriMesh(pose.apply(self.vertices), self.triangles.copy())
        m.degenerate_count = self.degenerate_count
        return m

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


def _is_watertight(F: np.ndarray) -> bool:
    if len(F) == 0:
        return False
    edges = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def _signed_volume(V: np.ndarray, F: np.ndarray) -> float:
    v0, v1, v2 = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)


# ---------------------------------------------------------------------------
# primitive builders (used by scene presets and tests)
# ---------------------------------------------------------------------------

def make_box(extents) -> TriMesh:
    """Axis-aligned box centered at the origin with the given (x, y, z) extents."""
    ex, ey, ez = np.asarray(extents, dtype=np.float64) / 2.0
    V = np.array([[sx, sy, sz] for sx in (-ex, ex) for sy in (-ey, ey) for sz in (-ez, ez)])
    F = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriMesh(V, F)


def make_icosphere(radius: float, subdivisions: int = 3) -> TriMesh:
    """Geodesic sphere; subdivisions=3 gives 1280 faces (chord error ~1e-4 at r=3cm)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    V = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    F = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v / np.linalg.norm(v) for v in V]
    faces = list(F)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh(np.array(verts) * radius, np.array(faces))


def make_cylinder(radius: float, height: float, segments: int = 48) -> TriMesh:
    """Closed cylinder along +z, base at z=-height/2."""
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bot = np.concatenate([ring, np.full((segments, 1), -height / 2.0)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height / 2.0)], axis=1)
    V = np.concatenate([bot, top, [[0, 0, -height / 2.0], [0, 0, height / 2.0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    F = []
    for i in range(segments):
        j = (i + 1) % segments
        F += [[i, j, segments + i], [j, segments + j, segments + i]]
        F += [[i, cb, j], [segments + i, segments + j, ct]]
    return TriMesh(V, np.array(F))


def make_wedge(width: float, depth: float, height: float) -> TriMesh:
    """Triangular prism: rectangular base (width x depth), ridge along y at +z."""
    w, d, h = width / 2.0, depth / 2.0, height
    V = np.array([
        [-w, -d, 0], [w, -d, 0], [w, d, 0], [-w, d, 0],
        [0, -d, h], [0, d, h],
    ], dtype=np.float64)
    F = np.array([
        [0, 2, 1], [0, 3, 2],      # base
        [0, 1, 4],                 # front triangle
        [2, 3, 5],                 # back triangle
        [1, 2, 5], [1, 5, 4],      # +x slope
        [3, 0, 4], [3, 4, 5],      # -x slope
    ])
    return TriMesh(V, F)


def sample_mesh_surface(mesh: TriMesh, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic dense surface sampling at about `spacing` between points.

    Each triangle is covered by a barycentric lattice that includes its corners,
    so no region farther than `spacing` from a sample exists.
    Returns (points (N,3), normals (N,3)).
    """
    corners = mesh.corners
    if len(corners) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    emax = np.maximum(np.linalg.norm(b - a, axis=1),
                      np.maximum(np.linalg.norm(c - a, axis=1),
                                 np.linalg.norm(c - b, axis=1)))
    ks = np.maximum(1, np.ceil(emax / spacing).astype(np.int64))
    counts = (ks + 1) * (ks + 2) // 2
    offsets = np.concatenate([[0], np.cumsum(counts)])
    pts = np.empty((offsets[-1], 3))
    nrm = np.empty((offsets[-1], 3))
    # triangles sharing a lattice resolution are filled in one broadcast
    for k in np.unique(ks):
        tri = np.flatnonzero(ks == k)
        ij = np.array([(i, j) for i in range(k + 1) for j in range(k + 1 - i)])
        u = (ij[:, 0] / k)[None, :, None]
        v = (ij[:, 1] / k)[None, :, None]
        block = (a[tri, None] + u * (b - a)[tri, None] + v * (c - a)[tri, None])
        dest = (offsets[tri][:, None] + np.arange(len(ij))[None, :]).ravel()
        pts[dest] = block.reshape(-1, 3)
        nrm[dest] = np.repeat(mesh.face_normals[tri], len(ij), axis=0)
    return pts, nrm


# ---------------------------------------------------------------------------
# ray / line intersection (Moller-Trumbore, vectorized)
# ---------------------------------------------------------------------------

def ray_hits_first(origins: np.ndarray, dirs: np.ndarray, corners: np.ndarray,
                   t_min: float = 1e-9, chunk: int = 4_000_000):
    """First intersection of each ray with a triangle soup.

    Args:
        origins: (R, 3) ray origins.
        dirs: (R, 3) ray directions (need not be unit).
        corners: (T, 3, 3) triangle corner array.
        t_min: hits closer than this are ignored.
        chunk: cap on rays*triangles handled per block.

    Returns:
        (t, tri_index): arrays of shape (R,); t = inf and index = -1 for misses.
    """
    R, T = len(origins), len(corners)
    best_t = np.full(R, np.inf)
    best_f = np.full(R, -1, dtype=np.int64)
    if T == 0 or R == 0:
        return best_t, best_f
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    rows = max(1, chunk // T)
    for lo in range(0, R, rows):
        hi = min(R, lo + rows)
        o = origins[lo:hi, None, :]
        d = dirs[lo:hi, None, :]
        p = np.cross(d, e2[None, :, :])
        det = np.einsum("rtk,tk->rt", p, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tv = o - v0[None, :, :]
            u = np.einsum("rtk,rtk->rt", tv, p) * inv
            q = np.cross(tv, e1[None, :, :])
            v = np.einsum("rtk,rtk->rt", q, d) * inv
            t = np.einsum("rtk,tk->rt", q, e2) * inv
            ok = (np.abs(det) > 1e-14) & (u >= -1e-12) & (v >= -1e-12) \
                & (u + v <= 1.0 + 1e-12) & (t > t_min)
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        tbest = t[np.arange(hi - lo), idx]
        best_t[lo:hi] = tbest
        best_f[lo:hi] = np.where(np.isfinite(tbest), idx, -1)
    return best_t, best_f


def line_hits_all(origins: np.ndarray, dirs: np.ndarray, corners: np.ndarray,
                  normals: np.ndarray, chunk: int = 4_000_000):
    """All intersections of full lines (t of either sign) with a triangle soup.

    Returns a list of (t_values, normal_rows) per line, t ascending.
    """
    L, T = len(origins), len(corners)
    out = [(np.empty(0), np.empty((0, 3)))] * L
    if T == 0 or L == 0:
        return out
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    rows = max(1, chunk // T)
    results = []
    for lo in range(0, L, rows):
        hi = min(L, lo + rows)
        o = origins[lo:hi, None, :]
        d = dirs[lo:hi, None, :]
        p = np.cross(d, e2[None, :, :])
        det = np.einsum("rtk,tk->rt", p, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tv = o - v0[None, :, :]
            u = np.einsum("rtk,rtk->rt", tv, p) * inv
            q = np.cross(tv, e1[None, :, :])
            v = np.einsum("rtk,rtk->rt", q, d) * inv
            t = np.einsum("rtk,tk->rt", q, e2) * inv
            ok = (np.abs(det) > 1e-14) & (u >= -1e-12) & (v >= -1e-12) \
                & (u + v <= 1.0 + 1e-12)
        li, ti = np.nonzero(ok)
        results.append((lo, li, ti, t[li, ti]))
    hits_t = [[] for _ in range(L)]
    hits_n = [[] for _ in range(L)]
    for lo, li, ti, tv in results:
        for k in range(len(li)):
            hits_t[lo + li[k]].append(tv[k])
            hits_n[lo + li[k]].append(ti[k])
    final = []
    for i in range(L):
        if hits_t[i]:
            tv = np.array(hits_t[i])
            order = np.argsort(tv)
            final.append((tv[order], normals[np.array(hits_n[i])[order]]))
        else:
            final.append((np.empty(0), np.empty((0, 3))))
    return final


def point_triangle_distances(points: np.ndarray, corners: np.ndarray,
                             chunk: int = 2_000_000):
    """Minimum distance from each point to a triangle soup.

    Returns (dist (P,), closest (P,3), tri_index (P,)).
    """
    P, T = len(points), len(corners)
    if P == 0 or T == 0:
        return np.full(P, np.inf), np.zeros((P, 3)), np.full(P, -1, dtype=np.int64)
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    ab, ac = b - a, c - a
    best_d = np.full(P, np.inf)
    best_p = np.zeros((P, 3))
    best_f = np.zeros(P, dtype=np.int64)
    rows = max(1, chunk // T)
    for lo in range(0, P, rows):
        hi = min(P, lo + rows)
        p = points[lo:hi, None, :]
        cp = _closest_on_triangles(p, a, ab, ac)
        d2 = np.einsum("ptk,ptk->pt", p - cp, p - cp)
        idx = np.argmin(d2, axis=1)
        rng = np.arange(hi - lo)
        best_d[lo:hi] = np.sqrt(d2[rng, idx])
        best_p[lo:hi] = cp[rng, idx]
        best_f[lo:hi] = idx
    return best_d, best_p, best_f


def _closest_on_triangles(p, a, ab, ac):
    """Closest point on each triangle (a, a+ab, a+ac) to each point; (P,T,3)."""
    ap = p - a
    d1 = np.einsum("tk,ptk->pt", ab, ap)
    d2 = np.einsum("tk,ptk->pt", ac, ap)
    bp = p - (a + ab)
    d3 = np.einsum("tk,ptk->pt", ab, bp)
    d4 = np.einsum("tk,ptk->pt", ac, bp)
    cp_ = p - (a + ac)
    d5 = np.einsum("tk,ptk->pt", ab, cp_)
    d6 = np.einsum("tk,ptk->pt", ac, cp_)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom_ab = d1 - d3
    denom_ac = d2 - d6
    with np.errstate(divide="ignore", invalid="ignore"):
        v_edge_ab = np.where(denom_ab != 0, d1 / denom_ab, 0.0)
        w_edge_ac = np.where(denom_ac != 0, d2 / denom_ac, 0.0)
        e_num = d4 - d3
        e_den = (d4 - d3) + (d5 - d6)
        w_edge_bc = np.where(e_den != 0, e_num / e_den, 0.0)
        denom = va + vb + vc
        v_in = np.where(denom != 0, vb / denom, 0.0)
        w_in = np.where(denom != 0, vc / denom, 0.0)
    v = np.zeros_like(d1)
    w = np.zeros_like(d1)
    # region tests in the order of Ericson's real-time collision detection
    inside = np.ones_like(d1, dtype=bool)
    r_a = (d1 <= 0) & (d2 <= 0)
    v = np.where(r_a, 0.0, v)
    w = np.where(r_a, 0.0, w)
    inside &= ~r_a
    r_b = inside & (d3 >= 0) & (d4 <= d3)
    v = np.where(r_b, 1.0, v)
    w = np.where(r_b, 0.0, w)
    inside &= ~r_b
    r_c = inside & (d6 >= 0) & (d5 <= d6)
    v = np.where(r_c, 0.0, v)
    w = np.where(r_c, 1.0, w)
    inside &= ~r_c
    r_ab = inside & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    v = np.where(r_ab, np.clip(v_edge_ab, 0.0, 1.0), v)
    w = np.where(r_ab, 0.0, w)
    inside &= ~r_ab
    r_ac = inside & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    v = np.where(r_ac, 0.0, v)
    w = np.where(r_ac, np.clip(w_edge_ac, 0.0, 1.0), w)
    inside &= ~r_ac
    r_bc = inside & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    wbc = np.clip(w_edge_bc, 0.0, 1.0)
    v = np.where(r_bc, 1.0 - wbc, v)
    w = np.where(r_bc, wbc, w)
    inside &= ~r_bc
    v = np.where(inside, v_in, v)
    w = np.where(inside, w_in, w)
    return a + v[..., None] * ab + w[..., None] * ac


def points_inside_mesh(points: np.ndarray, mesh_corners: np.ndarray) -> np.ndarray:
    """Ray-parity inside test against a (watertight) triangle soup."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=bool)
    # slightly irrational direction avoids edge-on degeneracies
    d = np.tile(normalized([0.5773502691896258, 0.5773502691896257, 0.5773502691896259]),
                (n, 1))
    counts = _count_crossings(points, d, mesh_corners)
    return counts % 2 == 1


def _count_crossings(origins, dirs, corners):
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    o = origins[:, None, :]
    d = dirs[:, None, :]
    p = np.cross(d, e2[None, :, :])
    det = np.einsum("rtk,tk->rt", p, e1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tv = o - v0[None, :, :]
        u = np.einsum("rtk,rtk->rt", tv, p) * inv
        q = np.cross(tv, e1[None, :, :])
        v = np.einsum("rtk,rtk->rt", q, d) * inv
        t = np.einsum("rtk,tk->rt", q, e2) * inv
        ok = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1.0) & (t > 0)
    return ok.sum(axis=1)


# ---------------------------------------------------------------------------
# mesh file I/O
# ---------------------------------------------------------------------------

def load_mesh(path, scale: float = 1.0) -> TriMesh:
    """Load an ASCII OBJ or binary little-endian PLY mesh.

    Vertex coordinates are multiplied by `scale` (meters per file unit).
    Face normals are recomputed from winding; a globally inverted watertight
    mesh is re-oriented outward.
    """
    path = Path(path)
    if not path.exists():
        raise MeshFormatError(f"{path}: file does not exist")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        V, F = _parse_obj(path)
    elif suffix == ".ply":
        V, F = _parse_ply(path)
    else:
        raise MeshFormatError(f"{path}: unsupported mesh format '{suffix}'")
    return TriMesh(V * float(scale), F)


def _parse_obj(path: Path):
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except (ValueError, IndexError) as exc:
                raise MeshFormatError(f"{path}: line {lineno}: {exc}") from exc
    if not verts or not faces:
        raise MeshFormatError(f"{path}: no usable v/f records")
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "int8": "i1", "uint8": "u1",
    "short": "i2", "ushort": "u2", "int16": "i2", "uint16": "u2",
    "int": "i4", "uint": "u4", "int32": "i4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply(path: Path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise MeshFormatError(f"{path}: missing ply magic at offset 0")
    end = data.find(b"end_header\n")
    if end < 0:
        raise MeshFormatError(f"{path}: unterminated header")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]
    elements = []  # (name, count, [(prop_name, dtype) or ('list', count_dt, item_dt, name)])
    fmt = None
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append(("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]], parts[4]))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt != "binary_little_endian":
        raise MeshFormatError(f"{path}: format '{fmt}' not supported (need binary_little_endian)")
    off = 0
    verts = None
    faces = []
    for name, count, props in elements:
        if all(p[0] != "list" for p in props):
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
            off += dt.itemsize * count
            if name == "vertex":
                try:
                    verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
                except KeyError as exc:
                    raise MeshFormatError(f"{path}: vertex element missing x/y/z") from exc
        else:
            # element with a list property (faces); parse row by row
            for _ in range(count):
                for p in props:
                    if p[0] == "list":
                        cnt_dt = np.dtype("<" + p[1])
                        n = int(np.frombuffer(body, dtype=cnt_dt, count=1, offset=off)[0])
                        off += cnt_dt.itemsize
                        item_dt = np.dtype("<" + p[2])
                        idx = np.frombuffer(body, dtype=item_dt, count=n, offset=off)
                        off += item_dt.itemsize * n
                        if name == "face" and p[3] in ("vertex_indices", "vertex_index"):
                            for k in range(1, n - 1):
                                faces.append([idx[0], idx[k], idx[k + 1]])
                    else:
                        off += np.dtype("<" + p[1]).itemsize
    if verts is None or not faces:
        raise MeshFormatError(f"{path}: no vertex/face elements (offset {off})")
    return verts, np.array(faces, dtype=np.int64)


def save_mesh_ply(mesh: TriMesh, path) -> None:
    """Write a binary little-endian PLY mesh."""
    V = mesh.vertices.astype("<f8")
    F = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(b"ply\nformat binary_little_endian 1.0\n")
        fh.write(f"element vertex {len(V)}\n".encode())
        fh.write(b"property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {len(F)}\n".encode())
        fh.write(b"property list uchar int vertex_indices\nend_header\n")
        fh.write(V.tobytes())
        for tri in F:
            fh.write(struct.pack("<B3i", 3, int(tri[0]), int(tri[1]), int(tri[2])))


def save_cloud_ply(positions: np.ndarray, normals: np.ndarray, path) -> None:
    """Write a point cloud as binary LE PLY with float32 x,y,z,nx,ny,nz."""
    n = len(positions)
    rec = np.empty((n, 6), dtype="<f4")
    rec[:, :3] = positions
    rec[:, 3:] = normals
    with open(path, "wb") as fh:
        fh.write(b"ply\nformat binary_little_endian 1.0\n")
        fh.write(f"element vertex {n}\n".encode())
        for name in ("x", "y", "z", "nx", "ny", "nz"):
            fh.write(f"property float {name}\n".encode())
        fh.write(b"end_header\n")
        fh.write(rec.tobytes())


def load_cloud_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a point cloud PLY written by save_cloud_ply; returns (positions, normals)."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshFormatError(f"{path}: not a PLY cloud")
    header = data[:end].decode("ascii").splitlines()
    count = 0
    names = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            names.append(parts[2])
    dt = np.dtype([(nm, "<f4") for nm in names])
    arr = np.frombuffer(data, dtype=dt, count=count, offset=end + len(b"end_header\n"))
    pos = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    nrm = np.stack([arr["nx"], arr["ny"], arr["nz"]], axis=1).astype(np.float64)
    return pos, nrm
