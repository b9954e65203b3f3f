"""Cluttered tabletop scenes and partial-view point clouds.

A scene is a set of rigidly posed meshes resting on a horizontal support
plane. Point clouds come from ray casting through a camera-facing grid, so
they contain only surfaces visible from the camera, with exact normals taken
from the hit faces. Table hits are kept but flagged, since grasp points must
come from objects while collision checks still need the table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import MeshFormatError, SceneTooDenseError
from .geometry import (
    RigidTransform,
    SurfacePoint,
    TriMesh,
    load_mesh,
    normalized,
    point_triangle_distances,
    points_inside_mesh,
    ray_hits_first,
    sample_mesh_surface,
    save_cloud_ply,
    save_mesh_ply,
)

MAX_PLACEMENT_REJECTIONS = 1000
PENETRATION_LIMIT = 0.001  # meters of allowed overlap between placed objects


@dataclass
class Scene:
    """Posed meshes on a support plane at z = plane_height."""

    objects: list[tuple[TriMesh, RigidTransform]]
    plane_height: float = 0.0
    identifier: str = "scene"
    _world: list[TriMesh] = field(default=None, repr=False)
    _corners: np.ndarray = field(default=None, repr=False)
    _normals: np.ndarray = field(default=None, repr=False)
    _tri_object: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._world = [mesh.transformed(pose) for mesh, pose in self.objects]
        if self._world:
            self._corners = np.concatenate([m.corners for m in self._world])
            self._normals = np.concatenate([m.face_normals for m in self._world])
            self._tri_object = np.concatenate(
                [np.full(len(m.triangles), i, dtype=np.int64)
                 for i, m in enumerate(self._world)])
        else:
            self._corners = np.zeros((0, 3, 3))
            self._normals = np.zeros((0, 3))
            self._tri_object = np.zeros(0, dtype=np.int64)

    @property
    def world_meshes(self) -> list[TriMesh]:
        return self._world

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) corners of every object triangle in world frame."""
        return self._corners

    @property
    def face_normals(self) -> np.ndarray:
        return self._normals

    @property
    def tri_object(self) -> np.ndarray:
        """Object index owning each row of `corners`."""
        return self._tri_object

    def object_bounds(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [m.bounds() for m in self._world]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._world:
            z = np.array([0.0, 0.0, self.plane_height])
            return z.copy(), z.copy()
        los, his = zip(*self.object_bounds())
        return np.min(los, axis=0), np.max(his, axis=0)

    def transformed(self, tf: RigidTransform) -> "Scene":
        """Scene with `tf` applied on the left of every object pose."""
        return Scene([(mesh, tf @ pose) for mesh, pose in self.objects],
                     self.plane_height, self.identifier)


@dataclass
class PointCloud:
    """Partial-view cloud; table points flagged on_plane, bad normals not reliable."""

    positions: np.ndarray
    normals: np.ndarray
    on_plane: np.ndarray
    camera: RigidTransform
    reliable: np.ndarray = None
    object_ids: np.ndarray = None
    warning: str | None = None

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(n, 3)
        self.on_plane = np.asarray(self.on_plane, dtype=bool).reshape(n)
        if self.reliable is None:
            self.reliable = np.ones(n, dtype=bool)
        if self.object_ids is None:
            self.object_ids = np.full(n, -1, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.positions)

    def transformed(self, tf: RigidTransform) -> "PointCloud":
        return PointCloud(tf.apply(self.positions), tf.apply_vector(self.normals),
                          self.on_plane.copy(), tf @ self.camera,
                          self.reliable.copy(), self.object_ids.copy(), self.warning)

    def object_points(self) -> np.ndarray:
        """Positions of reliable non-table points (grasp-point candidates)."""
        return self.positions[~self.on_plane & self.reliable]

    def save(self, path) -> None:
        save_cloud_ply(self.positions, self.normals, path)


def load_point_cloud(path, plane_height: float = 0.0,
                     camera: RigidTransform | None = None) -> PointCloud:
    """Read a cloud PLY; points within 1 mm of plane_height are flagged on_plane."""
    from .geometry import load_cloud_ply

    pos, nrm = load_cloud_ply(path)
    on_plane = np.abs(pos[:, 2] - plane_height) < 1e-3
    if camera is None:
        camera = RigidTransform.identity()
    return PointCloud(pos, nrm, on_plane, camera)


# ---------------------------------------------------------------------------
# scene synthesis
# ---------------------------------------------------------------------------

def synthesize_scene(object_library: list[TriMesh], count: int, rng_seed: int,
                     extent: float = 0.35, plane_height: float = 0.0) -> Scene:
    """Place `count` library objects with random yaw on the support plane.

    Positions are rejection-sampled inside a square of side `extent` until no
    placed pair penetrates deeper than 1 mm; each object gets at most 1000
    attempts before the scene is declared too dense.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not object_library:
        raise ValueError("object library is empty")
    rng = np.random.default_rng(rng_seed)
    samples = [sample_mesh_surface(m, 0.004)[0] for m in object_library]
    placed: list[tuple[TriMesh, RigidTransform]] = []
    placed_world: list[TriMesh] = []
    placed_samples: list[np.ndarray] = []
    half = extent / 2.0
    for k in range(count):
        lib_idx = int(rng.integers(len(object_library)))
        mesh = object_library[lib_idx]
        for _ in range(MAX_PLACEMENT_REJECTIONS):
            yaw = float(rng.uniform(0.0, 2.0 * np.pi))
            xy = rng.uniform(-half, half, size=2)
            pose = _resting_pose(mesh, yaw, xy, plane_height)
            world = mesh.transformed(pose)
            pts = pose.apply(samples[lib_idx])
            if all(_clear_of(world, pts, other, opts)
                   for other, opts in zip(placed_world, placed_samples)):
                placed.append((mesh, pose))
                placed_world.append(world)
                placed_samples.append(pts)
                break
        else:
            raise SceneTooDenseError(
                f"object {k} rejected {MAX_PLACEMENT_REJECTIONS} times "
                f"(extent {extent} m, {len(placed)} placed)")
    return Scene(placed, plane_height, f"scene-{rng_seed}-{count}")


def _resting_pose(mesh: TriMesh, yaw: float, xy, plane_height: float) -> RigidTransform:
    """Yaw the mesh, then drop it so its lowest vertex touches the plane."""
    tf = RigidTransform.from_yaw(yaw)
    zmin = tf.apply(mesh.vertices)[:, 2].min()
    return RigidTransform.from_yaw(
        yaw, [float(xy[0]), float(xy[1]), plane_height - zmin])


def _clear_of(mesh_a: TriMesh, samples_a: np.ndarray,
              mesh_b: TriMesh, samples_b: np.ndarray) -> bool:
    lo_a, hi_a = mesh_a.bounds()
    lo_b, hi_b = mesh_b.bounds()
    if np.any(lo_a > hi_b + PENETRATION_LIMIT) or np.any(lo_b > hi_a + PENETRATION_LIMIT):
        return True
    return (_penetration(samples_a, mesh_b) <= PENETRATION_LIMIT
            and _penetration(samples_b, mesh_a) <= PENETRATION_LIMIT)


def _penetration(samples: np.ndarray, mesh: TriMesh) -> float:
    """Deepest sample of one surface inside the other mesh (0 if none inside)."""
    lo, hi = mesh.bounds()
    near = np.all((samples >= lo - 1e-9) & (samples <= hi + 1e-9), axis=1)
    if not near.any():
        return 0.0
    pts = samples[near]
    inside = points_inside_mesh(pts, mesh.corners)
    if not inside.any():
        return 0.0
    depth, _, _ = point_triangle_distances(pts[inside], mesh.corners)
    return float(depth.max())


# ---------------------------------------------------------------------------
# cameras and clouds
# ---------------------------------------------------------------------------

def overhead_camera(scene: Scene, height: float = 0.6) -> RigidTransform:
    """Camera above the scene center looking straight down (+z of the camera
    frame is the viewing direction)."""
    lo, hi = scene.bounds()
    center = (lo + hi) / 2.0
    R = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    t = np.array([center[0], center[1], scene.plane_height + height])
    return RigidTransform(R, t)


def sample_point_cloud(scene: Scene, camera: RigidTransform,
                       resolution: int = 20000, table_margin: float = 0.06,
                       include_plane: bool = True) -> PointCloud:
    """Ray-cast a first-hit point cloud through a camera-facing grid.

    The grid spans the projection of the scene bounding box expanded by
    `table_margin` in x and y, so a rim of table around the objects appears
    in the cloud. Rays that hit nothing are dropped.
    """
    n = max(2, int(np.ceil(np.sqrt(resolution))))
    eye = camera.translation
    R = camera.rotation
    fwd, right, up = R[:, 2], R[:, 0], R[:, 1]
    lo, hi = scene.bounds()
    lo = lo - [table_margin, table_margin, 0.0]
    hi = hi + [table_margin, table_margin, 0.0]
    targets = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    rel = targets - eye
    depth = rel @ fwd
    if np.any(depth <= 1e-6):
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=bool),
                          camera, warning="scene bounding box behind camera")
    u = (rel @ right) / depth
    v = (rel @ up) / depth
    margin = 0.02
    us = np.linspace(u.min() - margin, u.max() + margin, n)
    vs = np.linspace(v.min() - margin, v.max() + margin, n)
    uu, vv = np.meshgrid(us, vs)
    dirs = (fwd[None, :] + uu.reshape(-1, 1) * right[None, :]
            + vv.reshape(-1, 1) * up[None, :])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.tile(eye, (len(dirs), 1))

    t_obj, tri = cast_rays_pruned(scene, origins, dirs)
    if include_plane:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_pln = (scene.plane_height - eye[2]) / dirs[:, 2]
        t_pln = np.where((t_pln > 1e-9) & np.isfinite(t_pln), t_pln, np.inf)
    else:
        t_pln = np.full(len(dirs), np.inf)
    plane_first = t_pln < t_obj
    t = np.where(plane_first, t_pln, t_obj)
    keep = np.isfinite(t)
    if not keep.any():
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=bool),
                          camera, warning="no ray hit the scene")
    t, dirs, tri = t[keep], dirs[keep], tri[keep]
    plane_first = plane_first[keep]
    pos = eye + t[:, None] * dirs
    nrm = np.tile([0.0, 0.0, 1.0], (len(pos), 1))
    ids = np.full(len(pos), -1, dtype=np.int64)
    obj_hit = ~plane_first
    nrm[obj_hit] = scene.face_normals[tri[obj_hit]]
    ids[obj_hit] = scene.tri_object[tri[obj_hit]]
    return PointCloud(pos, nrm, plane_first, camera, object_ids=ids)


def cast_rays_pruned(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """First hit of each ray against scene objects, pruned by per-object boxes.

    Returns (t (R,), global_triangle_index (R,)); misses are (inf, -1).
    """
    nrays = len(origins)
    best_t = np.full(nrays, np.inf)
    best_tri = np.full(nrays, -1, dtype=np.int64)
    offset = 0
    for i, mesh in enumerate(scene.world_meshes):
        lo, hi = mesh.bounds()
        mask = _ray_box_mask(origins, dirs, lo, hi, best_t)
        if mask.any():
            t, f = ray_hits_first(origins[mask], dirs[mask], mesh.corners)
            idx = np.nonzero(mask)[0]
            better = t < best_t[idx]
            best_t[idx[better]] = t[better]
            best_tri[idx[better]] = f[better] + offset
        offset += len(mesh.triangles)
    return best_t, best_tri


def _ray_box_mask(origins, dirs, lo, hi, t_cap) -> np.ndarray:
    """Rays whose slab-test entry precedes exit and the best hit so far."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origins) / dirs
        t2 = (hi - origins) / dirs
    near = np.nanmax(np.minimum(t1, t2), axis=1)
    far = np.nanmin(np.maximum(t1, t2), axis=1)
    return (near <= far) & (far > 0) & (near < t_cap)


def estimate_normals(points: np.ndarray, k: int,
                     camera_position) -> list[SurfacePoint]:
    """Per-point normals from a local plane fit over k nearest neighbors.

    Normals are oriented toward the camera. A neighborhood whose scatter is
    rank-deficient (collinear points) cannot define a plane; those points are
    flagged unreliable.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if k < 3:
        raise ValueError("k must be >= 3")
    if len(pts) < k:
        raise ValueError(f"need at least k={k} points, got {len(pts)}")
    cam = np.asarray(camera_position, dtype=np.float64).reshape(3)
    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=k)
    neigh = pts[nbr]
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    scale = np.einsum("nii->n", cov)
    reliable = w[:, 1] > 1e-9 * np.maximum(scale, 1e-30)
    flip = np.einsum("ni,ni->n", normals, cam[None, :] - pts) < 0.0
    normals = np.where(flip[:, None], -normals, normals)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, norms, out=np.zeros_like(normals), where=norms > 0)
    return [SurfacePoint(pts[i], normals[i], bool(reliable[i]))
            for i in range(len(pts))]


# ---------------------------------------------------------------------------
# scene descriptor I/O
# ---------------------------------------------------------------------------

def save_scene(scene: Scene, path, mesh_dir=None) -> None:
    """Write a JSON descriptor plus one PLY mesh file per object."""
    path = Path(path)
    mesh_dir = Path(mesh_dir) if mesh_dir is not None else path.parent
    mesh_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (mesh, pose) in enumerate(scene.objects):
        mesh_path = mesh_dir / f"{scene.identifier}-obj{i}.ply"
        save_mesh_ply(mesh, mesh_path)
        entries.append({
            "mesh": str(mesh_path),
            "rotation": [float(x) for x in pose.rotation.reshape(-1)],
            "translation": [float(x) for x in pose.translation],
        })
    doc = {"identifier": scene.identifier,
           "plane_height": scene.plane_height,
           "objects": entries}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_scene(path) -> Scene:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MeshFormatError(f"{path}: unreadable scene descriptor: {exc}") from exc
    objects = []
    for entry in doc.get("objects", []):
        mesh = load_mesh(entry["mesh"])
        pose = RigidTransform(np.array(entry["rotation"]).reshape(3, 3),
                              np.array(entry["translation"]))
        objects.append((mesh, pose))
    return Scene(objects, float(doc.get("plane_height", 0.0)),
                 doc.get("identifier", path.stem))
