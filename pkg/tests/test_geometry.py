import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dexfit import primitives
from dexfit.geometry import (MeshError, Ray, TriMesh, build_aabb_tree, closest_point,
                             closest_points, closest_points_brute_force, distance_batch,
                             inside_batch, is_inside, load_mesh, merge_meshes, ray_cast,
                             save_mesh)

from _oracles import closest_on_triangles, min_distance, ray_hits

UNIT_TRI = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def unit_cube():
    return primitives.box((1.0, 1.0, 1.0), center=(0.5, 0.5, 0.5))


@pytest.fixture(scope="module")
def blob():
    return primitives.random_blob(10_000, np.random.default_rng(7))


# --- mesh validation and I/O --------------------------------------------------

def test_rejects_out_of_range_index():
    with pytest.raises(MeshError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])


def test_rejects_degenerate_face():
    with pytest.raises(MeshError, match="degenerate"):
        TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])


def test_rejects_repeated_index():
    with pytest.raises(MeshError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 0, 2]])


def test_mesh_roundtrip(tmp_path):
    mesh = primitives.icosphere(0.3, 1)
    save_mesh(mesh, tmp_path / "s.mesh")
    back = load_mesh(tmp_path / "s.mesh")
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "bad.mesh").write_text("v 0 0 0\nq 1 2 3\n")
    with pytest.raises(MeshError):
        load_mesh(tmp_path / "bad.mesh")


@pytest.mark.parametrize("mesh", [primitives.box((0.1, 0.2, 0.3), subdiv=3),
                                  primitives.cylinder(0.03, 0.1, 16, 2),
                                  primitives.l_bracket(),
                                  primitives.icosphere(1.0, 2)])
def test_primitives_are_closed_and_outward(mesh):
    assert mesh.is_closed()
    tri = mesh.triangles()
    volume = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6
    assert volume > 0


def test_merge_offsets_faces():
    a, b = primitives.box(), primitives.icosphere(0.5, 0)
    m = merge_meshes([a, b])
    assert m.n_faces == a.n_faces + b.n_faces
    assert np.array_equal(m.triangles()[a.n_faces:], b.triangles())


# --- tree structure -----------------------------------------------------------

def test_single_triangle_tree_is_one_leaf():
    tree = build_aabb_tree(UNIT_TRI)
    assert tree.n_nodes == 1
    assert list(tree.leaves()) == [0]
    assert tree.count[0] == 1


def test_square_root_box():
    sq = TriMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    tree = build_aabb_tree(sq)
    assert np.array_equal(tree.box_min[0], [0, 0, 0])
    assert np.array_equal(tree.box_max[0], [1, 1, 0])


def test_every_face_in_exactly_one_leaf(blob):
    tree = build_aabb_tree(blob)
    seen = np.concatenate([tree.order[tree.start[n]:tree.start[n] + tree.count[n]]
                           for n in tree.leaves()])
    assert np.array_equal(np.sort(seen), np.arange(blob.n_faces))


def test_child_boxes_nest(blob):
    tree = build_aabb_tree(blob)
    inner = np.flatnonzero(tree.left >= 0)
    for child in (tree.left[inner], tree.right[inner]):
        assert np.all(tree.box_min[child] >= tree.box_min[inner])
        assert np.all(tree.box_max[child] <= tree.box_max[inner])
    tri = blob.triangles()
    for n in tree.leaves():
        faces = tree.order[tree.start[n]:tree.start[n] + tree.count[n]]
        assert np.all(tri[faces].min(axis=1) >= tree.box_min[n])
        assert np.all(tri[faces].max(axis=1) <= tree.box_max[n])


def test_tree_mesh_mismatch():
    tree = build_aabb_tree(UNIT_TRI)
    with pytest.raises(ValueError):
        closest_points(tree, primitives.box(), np.zeros((1, 3)))


# --- closest point ------------------------------------------------------------

def test_point_above_vertex_a():
    res = closest_point(build_aabb_tree(UNIT_TRI), UNIT_TRI, [0, 0, 1])
    assert np.allclose(res.point, 0)
    assert res.distance == 1.0
    assert res.bary == (1.0, 0.0, 0.0)


def test_vertex_query_has_zero_distance(blob):
    tree = build_aabb_tree(blob)
    res = closest_point(tree, blob, blob.vertices[37])
    assert res.distance == 0.0
    assert sorted(res.bary) == [0.0, 0.0, 1.0]
    assert 37 in blob.faces[res.face]


def test_tree_matches_brute_force(blob, rng):
    pts = rng.uniform(-0.2, 0.2, size=(1000, 3))
    tree = build_aabb_tree(blob)
    a = closest_points(tree, blob, pts)
    b = closest_points_brute_force(blob, pts)
    assert np.abs(a.distance - b.distance).max() <= 1e-12
    # faces agree unless two faces tie exactly (shared edge or vertex)
    assert np.mean(a.face == b.face) > 0.95


def test_brute_force_matches_numpy_oracle(rng):
    mesh = primitives.random_blob(600, rng)
    pts = rng.uniform(-0.2, 0.2, size=(300, 3))
    res = closest_points_brute_force(mesh, pts)
    assert np.allclose(res.distance, min_distance(mesh, pts), rtol=0, atol=1e-12)


def test_results_reconstruct_from_bary(blob, rng):
    pts = rng.normal(0, 0.15, size=(500, 3))
    res = closest_points(build_aabb_tree(blob), blob, pts)
    tri = blob.triangles()[res.face]
    recon = np.einsum("nk,nka->na", res.bary, tri)
    assert np.abs(recon - res.points).max() <= 1e-9
    assert np.allclose(np.linalg.norm(pts - res.points, axis=1), res.distance, atol=1e-15)


def test_surface_points_have_zero_distance(blob, rng):
    f = rng.integers(blob.n_faces, size=200)
    b = rng.dirichlet([1, 1, 1], size=200)
    pts = np.einsum("nk,nka->na", b, blob.triangles()[f])
    res = closest_points(build_aabb_tree(blob), blob, pts)
    assert res.distance.max() <= 1e-9


def test_batch_edge_cases(blob):
    tree = build_aabb_tree(blob)
    assert distance_batch(tree, blob, np.empty((0, 3))) == []
    p = np.array([[0.3, -0.1, 0.05]])
    r = distance_batch(tree, blob, np.vstack([p, p]))
    assert r[0].face == r[1].face and r[0].distance == r[1].distance


def test_batch_equals_sequential(blob, rng):
    pts = rng.uniform(-0.2, 0.2, size=(200, 3))
    tree = build_aabb_tree(blob)
    batch = closest_points(tree, blob, pts)
    seq = [closest_point(tree, blob, p) for p in pts]
    assert np.array_equal(batch.distance, [r.distance for r in seq])
    assert np.array_equal(batch.face, [r.face for r in seq])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=12, max_size=12))
def test_triangle_closest_point_property(coords):
    tri = np.array(coords[:9]).reshape(3, 3)
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    longest = max(np.sum((tri[i] - tri[j]) ** 2) for i, j in ((0, 1), (1, 2), (2, 0)))
    if np.linalg.norm(n) < 1e-3 * max(longest, 1e-12):
        return
    mesh = TriMesh(tri, [[0, 1, 2]])
    p = np.array(coords[9:])
    res = closest_point(build_aabb_tree(mesh), mesh, p)
    q = closest_on_triangles(p[None], tri[None])[0, 0]
    assert abs(res.distance - np.linalg.norm(p - q)) <= 1e-9
    assert min(res.bary) >= 0 and abs(sum(res.bary) - 1) <= 1e-12


# --- inside / outside ---------------------------------------------------------

def test_cube_inside_outside():
    cube = unit_cube()
    tree = build_aabb_tree(cube)
    assert is_inside(tree, cube, [0.5, 0.5, 0.5])
    assert not is_inside(tree, cube, [10.0, 10.0, 10.0])


def test_open_mesh_rejected():
    with pytest.raises(MeshError, match="not closed"):
        is_inside(build_aabb_tree(UNIT_TRI), UNIT_TRI, [0, 0, 0])


def test_sphere_parity_matches_analytic(rng):
    sphere = primitives.icosphere(1.0, 4)
    tree = build_aabb_tree(sphere)
    pts = rng.uniform(-1.5, 1.5, size=(1000, 3))
    # skip the thin shell where the tessellation and the true sphere disagree
    d = closest_points(tree, sphere, pts).distance
    r = np.linalg.norm(pts, axis=1)
    keep = (d >= 1e-3) & (np.abs(r - 1) > 0.02)
    got = inside_batch(tree, sphere, pts[keep])
    assert np.array_equal(got, r[keep] < 1)


def test_inside_flips_across_surface(rng):
    mesh = primitives.random_blob(800, rng)
    tree = build_aabb_tree(mesh)
    f = rng.integers(mesh.n_faces, size=100)
    foot = mesh.triangles()[f].mean(axis=1)
    n = mesh.face_normals()[f]
    inner = inside_batch(tree, mesh, foot - 1e-4 * n)
    outer = inside_batch(tree, mesh, foot + 1e-4 * n)
    assert np.all(inner) and not np.any(outer)


# --- rays ---------------------------------------------------------------------

def test_ray_down_z():
    tri = TriMesh([[-1, -1, 0], [1, -1, 0], [0, 1, 0]], [[0, 1, 2]])
    hit = ray_cast(build_aabb_tree(tri), tri, Ray([0, 0, 1], [0, 0, -1]))
    assert hit is not None and hit.t == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(tri.point_at(hit.face, hit.bary), [0, 0, 0], atol=1e-12)


def test_parallel_ray_misses():
    tri = TriMesh([[-1, -1, 0], [1, -1, 0], [0, 1, 0]], [[0, 1, 2]])
    assert ray_cast(build_aabb_tree(tri), tri, Ray([0, 0, 1], [1, 0, 0])) is None


def test_nearer_of_stacked_faces():
    v = [[-1, -1, 0], [1, -1, 0], [0, 1, 0], [-1, -1, 0.5], [1, -1, 0.5], [0, 1, 0.5]]
    mesh = TriMesh(v, [[0, 1, 2], [3, 4, 5]])
    hit = ray_cast(build_aabb_tree(mesh), mesh, Ray([0, 0, 2], [0, 0, -1]))
    assert hit.face == 1 and hit.t == pytest.approx(1.5)


def test_ray_origin_on_surface_is_skipped():
    cube = unit_cube()
    hit = ray_cast(build_aabb_tree(cube), cube, Ray([0.5, 0.5, 0.0], [0, 0, 1]))
    assert hit.t == pytest.approx(1.0)


def test_rays_match_moller_trumbore(rng):
    mesh = primitives.random_blob(500, rng)
    tree = build_aabb_tree(mesh)
    tri = mesh.triangles()
    for _ in range(100):
        o = rng.normal(size=3)
        o *= 0.4 / np.linalg.norm(o)
        d = rng.normal(0, 0.05, 3) - o
        t_ref, f_ref = ray_hits(o, d / np.linalg.norm(d), tri)
        hit = ray_cast(tree, mesh, Ray(o, d))
        if f_ref < 0:
            assert hit is None
        else:
            assert hit is not None and abs(hit.t - t_ref) <= 1e-9
