"""Independent reference implementations used only by the tests.

They share no code with the package kernels: closest points come from plane
projection plus segment clamping, ray hits from Moller-Trumbore in numpy,
and hand FK from an explicit per-joint 4x4 chain.
"""
import math

import numpy as np
from scipy.spatial.transform import Rotation


def _segment_closest(p, a, b):
    ab = b - a
    t = np.einsum("...i,...i->...", p - a, ab) / np.einsum("...i,...i->...", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    return a + t[..., None] * ab


def closest_on_triangles(p, tri):
    """Closest points from ``p`` (N, 3) to triangles ``tri`` (F, 3, 3): (N, F, 3)."""
    p = p[:, None, :]
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    proj = p - np.einsum("nfi,nfi->nf", p - a, np.broadcast_to(n, (p.shape[0],) + n.shape[1:]))[..., None] * n
    # barycentrics of the projection by signed sub-areas
    def area(x, y, z):
        return np.einsum("...i,...i->...", np.cross(y - x, z - x), n)
    total = area(a, b, c)
    u = area(proj, b, c) / total
    v = area(a, proj, c) / total
    w = area(a, b, proj) / total
    inside = (u >= 0) & (v >= 0) & (w >= 0)
    cands = np.stack([_segment_closest(p, a, b), _segment_closest(p, b, c),
                      _segment_closest(p, c, a)])
    d = np.linalg.norm(cands - p[None], axis=-1)
    edge = np.take_along_axis(cands, d.argmin(axis=0)[None, ..., None], axis=0)[0]
    return np.where(inside[..., None], proj, edge)


def min_distance(mesh, points, chunk=256):
    """Exhaustive minimum distance to every face, numpy only."""
    tri = mesh.triangles()
    points = np.asarray(points, dtype=np.float64)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        q = closest_on_triangles(p, tri)
        out[s:s + chunk] = np.linalg.norm(q - p[:, None], axis=-1).min(axis=1)
    return out


def ray_hits(origin, direction, tri, t_min=1e-9):
    """Moller-Trumbore over all triangles; returns (t, face) of the nearest hit or (inf, -1)."""
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    h = np.cross(direction, e2)
    det = np.einsum("fi,fi->f", e1, h)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - tri[:, 0]
    u = inv * np.einsum("fi,fi->f", s, h)
    q = np.cross(s, e1)
    v = inv * (q @ direction)
    t = inv * np.einsum("fi,fi->f", e2, q)
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > t_min)
    if not hit.any():
        return np.inf, -1
    t = np.where(hit, t, np.inf)
    f = int(np.argmin(t))
    return float(t[f]), f


def hand_fk(model, theta):
    """Joint positions and per-joint 4x4 world transforms by explicit chaining."""
    from dexfit.models import ARTICULATED, N_JOINTS

    pvec = model.basis @ np.asarray(theta, dtype=np.float64)
    local_rot = {0: pvec[0:3]}
    for n, j in enumerate(ARTICULATED):
        local_rot[j] = pvec[6 + 3 * n: 9 + 3 * n]
    J = model.rest_joints
    world = np.zeros((N_JOINTS, 4, 4))
    for j in range(N_JOINTS):
        T = np.eye(4)
        T[:3, :3] = Rotation.from_rotvec(local_rot.get(j, np.zeros(3))).as_matrix()
        p = model.parents[j]
        if p < 0:
            T[:3, 3] = J[0] + pvec[3:6]
            world[j] = T
        else:
            T[:3, 3] = J[j] - J[p]
            world[j] = world[p] @ T
    return world[:, :3, 3].copy(), world


def hand_skin(model, theta):
    """LBS with dense weights from the explicit FK chain."""
    _, world = hand_fk(model, theta)
    v = model.shaped_vertices
    out = np.zeros_like(v)
    for j in range(len(world)):
        local = v - model.rest_joints[j]
        out += model.weights[:, j, None] * (local @ world[j, :3, :3].T + world[j, :3, 3])
    return out


def parity_inside(mesh, points, direction=(0.2113, 0.5774, 0.7887)):
    """Odd number of Moller-Trumbore crossings along one fixed direction."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    tri = mesh.triangles()
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    h = np.cross(d, e2)
    det = np.einsum("fi,fi->f", e1, h)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    out = np.empty(len(points), bool)
    for i, p in enumerate(np.asarray(points, dtype=np.float64)):
        s = p - tri[:, 0]
        u = inv * np.einsum("fi,fi->f", s, h)
        q = np.cross(s, e1)
        v = inv * (q @ d)
        t = inv * np.einsum("fi,fi->f", e2, q)
        out[i] = np.count_nonzero(ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)) % 2 == 1
    return out


def quat_match(g_t, g_q, h_t, h_q, sigma_t, sigma_q):
    """The matching predicate written out with plain Python math."""
    dt = math.sqrt(sum((a - b) ** 2 for a, b in zip(g_t, h_t)))
    dot = abs(sum(a * b for a, b in zip(g_q, h_q)))
    return dt < sigma_t and math.acos(min(1.0, dot)) < sigma_q


def loop_coverage(chi_t, chi_q, free, ref_t, ref_q, sigma_t, sigma_q):
    if len(ref_t) == 0:
        return 1.0
    hit = 0
    for r in range(len(ref_t)):
        for g in range(len(chi_t)):
            if free[g] and quat_match(chi_t[g], chi_q[g], ref_t[r], ref_q[r], sigma_t, sigma_q):
                hit += 1
                break
    return hit / len(ref_t)


def loop_precision(chi_t, chi_q, ref_t, ref_q, sigma_t, sigma_q):
    if len(chi_t) == 0:
        return None
    hit = 0
    for g in range(len(chi_t)):
        if any(quat_match(chi_t[g], chi_q[g], ref_t[r], ref_q[r], sigma_t, sigma_q)
               for r in range(len(ref_t))):
            hit += 1
    return hit / len(chi_t)


def random_grasp_instance(rng, n_chi=40, n_ref=30):
    """Clustered random grasps so that both matches and misses occur."""
    from scipy.spatial.transform import Rotation

    centers = rng.uniform(-0.1, 0.1, size=(5, 3))
    base = Rotation.random(5, random_state=int(rng.integers(2**31))).as_quat(scalar_first=True)

    def draw(n):
        k = rng.integers(5, size=n)
        t = centers[k] + rng.normal(0, 0.03, size=(n, 3))
        jitter = Rotation.from_rotvec(rng.normal(0, 0.2, size=(n, 3)))
        q = (jitter * Rotation.from_quat(base[k], scalar_first=True)).as_quat(scalar_first=True)
        q *= rng.choice([-1.0, 1.0], size=(n, 1))
        return t, q

    return draw(n_chi), draw(n_ref)
