"""Compiled inner loops for the AABB tree.

Everything here works on plain arrays so the public wrappers in
``geometry`` can stay thin. Trees are stored flat:

    box_min, box_max : (M, 3)  node bounds
    left, right      : (M,)    child node ids, -1 for leaves
    start, count     : (M,)    leaf range into ``order``
    order            : (F,)    face ids permuted so every leaf is contiguous
"""
import numpy as np
from numba import njit, prange

LEAF_SIZE = 4
RAY_T_MIN = 1e-9
# relative slack on box pruning so exact ties across leaves are never skipped
_PRUNE_SLACK = 1e-12
_STACK = 128


@njit(cache=True, inline="always")
def _sub(a, b):
    return a[0] - b[0], a[1] - b[1], a[2] - b[2]


@njit(cache=True, inline="always")
def _dot3(x0, x1, x2, y0, y1, y2):
    return x0 * y0 + x1 * y1 + x2 * y2


@njit(cache=True, inline="always")
def closest_on_triangle(p, a, b, c):
    """Closest point of triangle abc to p as barycentric (u, v, w) for (a, b, c)."""
    ab0, ab1, ab2 = _sub(b, a)
    ac0, ac1, ac2 = _sub(c, a)
    ap0, ap1, ap2 = _sub(p, a)
    d1 = _dot3(ab0, ab1, ab2, ap0, ap1, ap2)
    d2 = _dot3(ac0, ac1, ac2, ap0, ap1, ap2)
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0
    bp0, bp1, bp2 = _sub(p, b)
    d3 = _dot3(ab0, ab1, ab2, bp0, bp1, bp2)
    d4 = _dot3(ac0, ac1, ac2, bp0, bp1, bp2)
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return 1.0 - v, v, 0.0
    cp0, cp1, cp2 = _sub(p, c)
    d5 = _dot3(ab0, ab1, ab2, cp0, cp1, cp2)
    d6 = _dot3(ac0, ac1, ac2, cp0, cp1, cp2)
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return 1.0 - w, 0.0, w
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 0.0, 1.0 - w, w
    denom = 1.0 / (va + vb + vc)
    v = max(vb * denom, 0.0)
    w = max(vc * denom, 0.0)
    s = v + w
    if s > 1.0:
        v /= s
        w /= s
    return 1.0 - v - w, v, w


@njit(cache=True, inline="always")
def _face_query(p, verts, faces, f, out_q):
    """Barycentrics and squared distance for one face; the foot point goes to ``out_q``."""
    a = verts[faces[f, 0]]
    b = verts[faces[f, 1]]
    c = verts[faces[f, 2]]
    u, v, w = closest_on_triangle(p, a, b, c)
    q0 = u * a[0] + v * b[0] + w * c[0]
    q1 = u * a[1] + v * b[1] + w * c[1]
    q2 = u * a[2] + v * b[2] + w * c[2]
    r0 = p[0] - q0
    r1 = p[1] - q1
    r2 = p[2] - q2
    out_q[0] = q0
    out_q[1] = q1
    out_q[2] = q2
    return u, v, w, (r0 * r0 + r1 * r1) + r2 * r2


@njit(cache=True)
def build_tree(box_lo, box_hi, centroids):
    n = centroids.shape[0]
    cap = 2 * n + 1
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    order = np.arange(n)

    stack = np.empty((cap, 2), np.int64)
    stack[0, 0] = 0  # node id
    stack[0, 1] = 0  # unused slot keeps the stack 2-wide
    start[0] = 0
    count[0] = n
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        s = start[node]
        e = s + count[node]
        for k in range(3):
            lo = np.inf
            hi = -np.inf
            for i in range(s, e):
                f = order[i]
                if box_lo[f, k] < lo:
                    lo = box_lo[f, k]
                if box_hi[f, k] > hi:
                    hi = box_hi[f, k]
            node_min[node, k] = lo
            node_max[node, k] = hi
        if e - s <= LEAF_SIZE:
            continue
        axis = 0
        ext = node_max[node, 0] - node_min[node, 0]
        for k in range(1, 3):
            if node_max[node, k] - node_min[node, k] > ext:
                ext = node_max[node, k] - node_min[node, k]
                axis = k
        keys = np.empty(e - s)
        for i in range(s, e):
            keys[i - s] = centroids[order[i], axis]
        perm = np.argsort(keys, kind="mergesort")
        seg = order[s:e].copy()
        for i in range(e - s):
            order[s + i] = seg[perm[i]]
        mid = s + (e - s) // 2
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        start[lc] = s
        count[lc] = mid - s
        start[rc] = mid
        count[rc] = e - mid
        stack[top, 0] = rc
        top += 1
        stack[top, 0] = lc
        top += 1
    return (node_min[:n_nodes].copy(), node_max[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            start[:n_nodes].copy(), count[:n_nodes].copy(), order)


@njit(cache=True, inline="always")
def _box_d2(p, node_min, node_max, node):
    d2 = 0.0
    for k in range(3):
        if p[k] < node_min[node, k]:
            r = node_min[node, k] - p[k]
            d2 += r * r
        elif p[k] > node_max[node, k]:
            r = p[k] - node_max[node, k]
            d2 += r * r
    return d2


@njit(cache=True, inline="always")
def _closest_one(p, verts, faces, node_min, node_max, left, right, start, count,
                 order, out_q, out_bary):
    best_d2 = np.inf
    best_f = -1
    q = np.empty(3)
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_d2(p, node_min, node_max, node) > best_d2 * (1.0 + _PRUNE_SLACK):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                u, v, w, d2 = _face_query(p, verts, faces, f, q)
                if d2 < best_d2 or (d2 == best_d2 and f < best_f):
                    best_d2 = d2
                    best_f = f
                    out_q[0] = q[0]
                    out_q[1] = q[1]
                    out_q[2] = q[2]
                    out_bary[0] = u
                    out_bary[1] = v
                    out_bary[2] = w
            continue
        lc = left[node]
        rc = right[node]
        dl = _box_d2(p, node_min, node_max, lc)
        dr = _box_d2(p, node_min, node_max, rc)
        # nearer child on top of the stack
        if dl <= dr:
            stack[top] = rc
            stack[top + 1] = lc
        else:
            stack[top] = lc
            stack[top + 1] = rc
        top += 2
    return best_f, best_d2


@njit(cache=True, parallel=True)
def closest_points_tree(points, verts, faces, node_min, node_max, left, right,
                        start, count, order):
    n = points.shape[0]
    q = np.empty((n, 3))
    bary = np.empty((n, 3))
    face = np.empty(n, np.int64)
    dist = np.empty(n)
    for i in prange(n):
        f, d2 = _closest_one(points[i], verts, faces, node_min, node_max, left,
                             right, start, count, order, q[i], bary[i])
        face[i] = f
        dist[i] = np.sqrt(d2)
    return q, bary, face, dist


@njit(cache=True, parallel=True)
def closest_points_brute(points, verts, faces):
    n = points.shape[0]
    q = np.empty((n, 3))
    bary = np.empty((n, 3))
    face = np.empty(n, np.int64)
    dist = np.empty(n)
    for i in prange(n):
        p = points[i]
        qq = np.empty(3)
        best_d2 = np.inf
        best_f = -1
        for f in range(faces.shape[0]):
            u, v, w, d2 = _face_query(p, verts, faces, f, qq)
            if d2 < best_d2:
                best_d2 = d2
                best_f = f
                q[i, 0] = qq[0]
                q[i, 1] = qq[1]
                q[i, 2] = qq[2]
                bary[i, 0] = u
                bary[i, 1] = v
                bary[i, 2] = w
        face[i] = best_f
        dist[i] = np.sqrt(best_d2)
    return q, bary, face, dist


@njit(cache=True, inline="always")
def _ray_box(o, inv_d, node_min, node_max, node, t_max):
    t0 = RAY_T_MIN
    t1 = t_max
    for k in range(3):
        ta = (node_min[node, k] - o[k]) * inv_d[k]
        tb = (node_max[node, k] - o[k]) * inv_d[k]
        if ta > tb:
            ta, tb = tb, ta
        # NaN from 0*inf (origin on a slab plane) must not reject the box
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@njit(cache=True)
def ray_triangle(o, d, a, b, c):
    """Moller-Trumbore. Returns (t, beta, gamma, det); t = inf on a miss."""
    e10, e11, e12 = _sub(b, a)
    e20, e21, e22 = _sub(c, a)
    p0 = d[1] * e22 - d[2] * e21
    p1 = d[2] * e20 - d[0] * e22
    p2 = d[0] * e21 - d[1] * e20
    det = _dot3(e10, e11, e12, p0, p1, p2)
    if det == 0.0:
        return np.inf, 0.0, 0.0, det
    inv = 1.0 / det
    s0, s1, s2 = _sub(o, a)
    beta = _dot3(s0, s1, s2, p0, p1, p2) * inv
    if beta < 0.0 or beta > 1.0:
        return np.inf, 0.0, 0.0, det
    q0 = s1 * e12 - s2 * e11
    q1 = s2 * e10 - s0 * e12
    q2 = s0 * e11 - s1 * e10
    gamma = _dot3(d[0], d[1], d[2], q0, q1, q2) * inv
    if gamma < 0.0 or beta + gamma > 1.0:
        return np.inf, 0.0, 0.0, det
    t = _dot3(e20, e21, e22, q0, q1, q2) * inv
    if not (t > RAY_T_MIN):
        return np.inf, 0.0, 0.0, det
    return t, beta, gamma, det


@njit(cache=True)
def _ray_one(o, d, verts, faces, node_min, node_max, left, right, start, count,
             order, out_bary):
    inv_d = np.empty(3)
    for k in range(3):
        inv_d[k] = 1.0 / d[k] if d[k] != 0.0 else np.inf
    best_t = np.inf
    best_f = -1
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _ray_box(o, inv_d, node_min, node_max, node, best_t):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                t, beta, gamma, _ = ray_triangle(o, d, verts[faces[f, 0]],
                                                 verts[faces[f, 1]], verts[faces[f, 2]])
                if t < best_t or (t == best_t and f < best_f):
                    best_t = t
                    best_f = f
                    out_bary[0] = 1.0 - beta - gamma
                    out_bary[1] = beta
                    out_bary[2] = gamma
            continue
        stack[top] = right[node]
        stack[top + 1] = left[node]
        top += 2
    return best_f, best_t


@njit(cache=True, parallel=True)
def ray_cast_tree(origins, dirs, verts, faces, node_min, node_max, left, right,
                  start, count, order):
    n = origins.shape[0]
    face = np.empty(n, np.int64)
    t = np.empty(n)
    bary = np.zeros((n, 3))
    for i in prange(n):
        f, tt = _ray_one(origins[i], dirs[i], verts, faces, node_min, node_max,
                         left, right, start, count, order, bary[i])
        face[i] = f
        t[i] = tt
    return face, t, bary


@njit(cache=True)
def _parity_one(o, d, verts, faces, node_min, node_max, left, right, start, count,
                order, edge_tol):
    """Count crossings along the ray. Returns -1 when the ray grazes an edge/vertex."""
    inv_d = np.empty(3)
    for k in range(3):
        inv_d[k] = 1.0 / d[k] if d[k] != 0.0 else np.inf
    hits = 0
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _ray_box(o, inv_d, node_min, node_max, node, np.inf):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                a = verts[faces[f, 0]]
                b = verts[faces[f, 1]]
                c = verts[faces[f, 2]]
                t, beta, gamma, det = ray_triangle(o, d, a, b, c)
                if t == np.inf:
                    continue
                alpha = 1.0 - beta - gamma
                if alpha < edge_tol or beta < edge_tol or gamma < edge_tol:
                    return -1
                n0 = (b[1] - a[1]) * (c[2] - a[2]) - (b[2] - a[2]) * (c[1] - a[1])
                n1 = (b[2] - a[2]) * (c[0] - a[0]) - (b[0] - a[0]) * (c[2] - a[2])
                n2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                nn = np.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
                if abs(det) < edge_tol * nn:
                    return -1
                hits += 1
            continue
        stack[top] = right[node]
        stack[top + 1] = left[node]
        top += 2
    return hits


@njit(cache=True, parallel=True)
def inside_tree(points, directions, verts, faces, node_min, node_max, left, right,
                start, count, order, edge_tol):
    n = points.shape[0]
    out = np.zeros(n, np.bool_)
    for i in prange(n):
        for j in range(directions.shape[0]):
            h = _parity_one(points[i], directions[j], verts, faces, node_min,
                            node_max, left, right, start, count, order, edge_tol)
            if h >= 0:
                out[i] = (h % 2) == 1
                break
    return out
