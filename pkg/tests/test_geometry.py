import numpy as np
import pytest

from fingrasp.errors import MeshFormatError
from fingrasp.geometry import (
    RigidTransform,
    TriMesh,
    line_hits_all,
    load_cloud_ply,
    load_mesh,
    make_box,
    make_cylinder,
    make_icosphere,
    make_wedge,
    point_triangle_distances,
    points_inside_mesh,
    ray_hits_first,
    sample_mesh_surface,
    save_cloud_ply,
    save_mesh_ply,
)

UNIT_CUBE_OBJ = """\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 2 3 4
f 8 7 6 5
f 1 5 6 2
f 2 6 7 3
f 3 7 8 4
f 4 8 5 1
"""


def test_transform_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        R = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])
        tf = RigidTransform(R, rng.normal(size=3))
        pts = rng.normal(size=(50, 3))
        back = tf.inverse().apply(tf.apply(pts))
        assert np.abs(back - pts).max() < 1e-9


def test_transform_composition():
    a = RigidTransform.from_yaw(0.7, [0.1, 0.0, 0.0])
    b = RigidTransform.from_yaw(-0.2, [0.0, 0.3, 0.1])
    pts = np.random.default_rng(1).normal(size=(10, 3))
    assert np.allclose((a @ b).apply(pts), a.apply(b.apply(pts)))


def test_transform_rejects_non_rotation():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_rotation_about_axis_fixes_axis_points():
    tf = RigidTransform.rotation_about_axis([0.2, 0.1, 0.0], [0, 0, 1], 1.3)
    fixed = tf.apply(np.array([[0.2, 0.1, 0.0], [0.2, 0.1, 5.0]]))
    assert np.abs(fixed - [[0.2, 0.1, 0.0], [0.2, 0.1, 5.0]]).max() < 1e-12


def test_obj_cube_scaled(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(UNIT_CUBE_OBJ)
    mesh = load_mesh(p, scale=0.04)
    assert len(mesh.vertices) == 8
    assert len(mesh.triangles) == 12
    lo, hi = mesh.bounds()
    assert np.allclose(hi - lo, 0.04)
    # every edge of the cube is 0.04 or a 0.04*sqrt(2) face diagonal
    corners = mesh.corners
    for f in range(12):
        a, b, c = corners[f]
        for e in (b - a, c - b, a - c):
            ln = np.linalg.norm(e)
            assert abs(ln - 0.04) < 1e-12 or abs(ln - 0.04 * np.sqrt(2)) < 1e-12
    assert mesh.watertight


def test_obj_identity_scale_is_exact(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(UNIT_CUBE_OBJ)
    mesh = load_mesh(p, scale=1.0)
    assert set(map(tuple, mesh.vertices)) == {
        (x, y, z) for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)
    }


def test_obj_bad_face_reports_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 zzz\n")
    with pytest.raises(MeshFormatError) as exc:
        load_mesh(p)
    assert "line 4" in str(exc.value)


def test_obj_negative_indices(tmp_path):
    p = tmp_path / "neg.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    mesh = load_mesh(p)
    assert list(mesh.triangles[0]) == [0, 1, 2]


def test_winding_repair_on_inverted_tetrahedron():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    F_out = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    F_in = F_out[:, ::-1]  # all faces wound inward
    good = TriMesh(V, F_out)
    fixed = TriMesh(V, F_in)
    assert good.watertight and fixed.watertight
    centroid = V.mean(axis=0)
    for mesh in (good, fixed):
        centers = mesh.corners.mean(axis=1)
        outward = np.einsum("ij,ij->i", mesh.face_normals, centers - centroid)
        assert np.all(outward > 0)


def test_degenerate_faces_dropped():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    F = np.array([[0, 1, 2], [0, 1, 1], [2, 2, 2]])
    mesh = TriMesh(V, F)
    assert len(mesh.triangles) == 1
    assert mesh.degenerate_count == 2


def test_primitive_watertightness_and_volume():
    box = make_box([0.04, 0.06, 0.02])
    assert box.watertight
    sph = make_icosphere(0.03, subdivisions=3)
    assert sph.watertight
    cyl = make_cylinder(0.02, 0.1)
    assert cyl.watertight
    wed = make_wedge(0.05, 0.04, 0.03)
    assert wed.watertight
    # outward normals: signed volume positive
    def vol(m):
        v0, v1, v2 = m.corners[:, 0], m.corners[:, 1], m.corners[:, 2]
        return np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0
    assert abs(vol(box) - 0.04 * 0.06 * 0.02) < 1e-12
    # inscribed polyhedra under-approximate curved solids: volume within 1.5%
    v_sph = 4 / 3 * np.pi * 0.03**3
    assert 0 < v_sph - vol(sph) < 0.015 * v_sph
    v_cyl = np.pi * 0.02**2 * 0.1
    assert 0 < v_cyl - vol(cyl) < 0.015 * v_cyl
    assert abs(vol(wed) - 0.5 * 0.05 * 0.03 * 0.04) < 1e-12


def test_ray_cast_box_face():
    box = make_box([0.04, 0.04, 0.04])
    origins = np.array([[0.0, 0.0, 1.0], [0.5, 0.5, 1.0]])
    dirs = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]])
    t, f = ray_hits_first(origins, dirs, box.corners)
    assert abs(t[0] - 0.98) < 1e-12
    assert f[0] >= 0
    assert np.isinf(t[1]) and f[1] == -1


def test_ray_cast_matches_sphere_analytics():
    sph = make_icosphere(0.03, subdivisions=4)
    rng = np.random.default_rng(7)
    dirs = rng.normal(size=(100, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = -0.5 * dirs
    t, f = ray_hits_first(origins, dirs, sph.corners)
    assert np.all(f >= 0)
    # icosphere is inscribed, so hits land slightly inside the sphere radius
    assert np.all(np.abs(t - (0.5 - 0.03)) < 5e-5)


def test_line_hits_all_counts_and_order():
    box = make_box([0.04, 0.04, 0.04])
    # off the face diagonals so each face contributes a single hit
    origins = np.array([[0.0, 0.005, 0.007]])
    dirs = np.array([[1.0, 0.0, 0.0]])
    hits = line_hits_all(origins, dirs, box.corners, box.face_normals)
    tv, nv = hits[0]
    assert len(tv) == 2
    assert np.allclose(tv, [-0.02, 0.02])
    assert np.allclose(nv[0], [-1, 0, 0])
    assert np.allclose(nv[1], [1, 0, 0])


def test_line_through_shared_edge_duplicates_are_sorted():
    box = make_box([0.04, 0.04, 0.04])
    # the face center sits on the diagonal shared by two coplanar triangles,
    # so both report the crossing; callers take min/max over sides
    hits = line_hits_all(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]),
                         box.corners, box.face_normals)
    tv, _ = hits[0]
    assert len(tv) == 4
    assert np.all(np.diff(tv) >= 0)
    assert abs(tv.min() + 0.02) < 1e-12 and abs(tv.max() - 0.02) < 1e-12


def test_point_triangle_distance_matches_bruteforce():
    rng = np.random.default_rng(3)
    corners = rng.normal(size=(40, 3, 3))
    points = rng.normal(size=(60, 3)) * 2.0
    dist, closest, _ = point_triangle_distances(points, corners)
    # brute force: dense barycentric sampling of each triangle
    u = np.linspace(0, 1, 60)
    uu, vv = np.meshgrid(u, u)
    keep = (uu + vv) <= 1.0
    bar = np.stack([1 - uu[keep] - vv[keep], uu[keep], vv[keep]], axis=1)
    samples = np.einsum("sk,tkj->tsj", bar, corners).reshape(-1, 3)
    d_ref = np.sqrt(((points[:, None, :] - samples[None]) ** 2).sum(-1)).min(axis=1)
    # sampling gives an upper bound on true distance; engine must stay at or
    # below it, and within one sampling pitch of it
    assert (dist - d_ref).max() < 1e-9
    assert (d_ref - dist).max() < 6e-3
    assert np.abs(np.linalg.norm(points - closest, axis=1) - dist).max() < 1e-12


def test_points_inside_mesh():
    box = make_box([0.04, 0.06, 0.02])
    pts = np.array([
        [0.0, 0.0, 0.0],
        [0.019, 0.029, 0.009],
        [0.021, 0.0, 0.0],
        [0.0, 0.031, 0.0],
        [1.0, 1.0, 1.0],
    ])
    inside = points_inside_mesh(pts, box.corners)
    assert list(inside) == [True, True, False, False, False]


def test_surface_sampling_density_and_determinism():
    box = make_box([0.04, 0.04, 0.04])
    p1, n1 = sample_mesh_surface(box, 0.004)
    p2, n2 = sample_mesh_surface(box, 0.004)
    assert np.array_equal(p1, p2) and np.array_equal(n1, n2)
    # every sample sits on the surface and every face normal is axis-aligned
    lo, hi = box.bounds()
    on_face = (np.abs(np.abs(p1) - 0.02).min(axis=1)) < 1e-12
    assert np.all(on_face)
    assert np.allclose(np.abs(n1).max(axis=1), 1.0)
    # spacing: nearest neighbor below the requested pitch
    d = np.linalg.norm(p1[:, None] - p1[None, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min(axis=0).max() < 0.004 + 1e-12


def test_mesh_ply_roundtrip(tmp_path):
    mesh = make_wedge(0.05, 0.04, 0.03)
    p = tmp_path / "wedge.ply"
    save_mesh_ply(mesh, p)
    back = load_mesh(p)
    assert np.allclose(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_ply_rejects_ascii(tmp_path):
    p = tmp_path / "a.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(MeshFormatError) as exc:
        load_mesh(p)
    assert "binary_little_endian" in str(exc.value)


def test_cloud_ply_roundtrip_float32(tmp_path):
    rng = np.random.default_rng(11)
    pos = rng.normal(size=(100, 3))
    nrm = rng.normal(size=(100, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    p = tmp_path / "cloud.ply"
    save_cloud_ply(pos, nrm, p)
    pos2, nrm2 = load_cloud_ply(p)
    assert np.array_equal(pos2, pos.astype(np.float32).astype(np.float64))
    assert np.array_equal(nrm2, nrm.astype(np.float32).astype(np.float64))


def test_missing_file_raises():
    with pytest.raises(MeshFormatError):
        load_mesh("/nonexistent/mesh.obj")
