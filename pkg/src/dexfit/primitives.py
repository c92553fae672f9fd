"""Procedural closed meshes used as object stand-ins and in tests."""
import numpy as np

from .geometry import TriMesh

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # -z
    [4, 5, 6], [4, 6, 7],  # +z
    [0, 1, 5], [0, 5, 4],  # -y
    [3, 7, 6], [3, 6, 2],  # +y
    [0, 4, 7], [0, 7, 3],  # -x
    [1, 2, 6], [1, 6, 5],  # +x
])


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), subdiv: int = 1) -> TriMesh:
    """Axis-aligned box, outward-facing triangles.

    ``subdiv`` > 1 splits every face into a ``subdiv x subdiv`` grid.
    """
    h = 0.5 * np.asarray(size, dtype=float)
    c = np.asarray(center, dtype=float)
    if subdiv <= 1:
        corners = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], float)
        corners = corners[[0, 1, 3, 2, 4, 5, 7, 6]]
        return TriMesh(corners * h + c, _BOX_FACES)
    # grid per face, then weld duplicate vertices along the seams
    n = subdiv
    verts, faces = [], []
    g = np.linspace(-1.0, 1.0, n + 1)
    for axis in range(3):
        for sign in (-1.0, 1.0):
            a1, a2 = [k for k in range(3) if k != axis]
            if sign < 0:
                a1, a2 = a2, a1
            base = len(verts)
            for i in range(n + 1):
                for j in range(n + 1):
                    p = np.zeros(3)
                    p[axis] = sign
                    p[a1] = g[i]
                    p[a2] = g[j]
                    verts.append(p)
            for i in range(n):
                for j in range(n):
                    v00 = base + i * (n + 1) + j
                    v10 = v00 + (n + 1)
                    faces.append([v00, v10, v10 + 1])
                    faces.append([v00, v10 + 1, v00 + 1])
    verts = np.array(verts)
    key = np.round(verts * (4 * n)).astype(np.int64)
    _, idx, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    faces = inv.reshape(-1)[np.array(faces)]
    return TriMesh(verts[idx] * h + c, faces)


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 24,
             stacks: int = 1) -> TriMesh:
    """Closed cylinder along z, centred on the origin."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    zs = np.linspace(-0.5 * height, 0.5 * height, stacks + 1)
    verts = [np.column_stack([ring, np.full(segments, z)]) for z in zs]
    verts.append([[0, 0, zs[0]], [0, 0, zs[-1]]])
    verts = np.concatenate(verts)
    faces = []
    for s in range(stacks):
        for i in range(segments):
            j = (i + 1) % segments
            a, b = s * segments + i, s * segments + j
            faces += [[a, b, b + segments], [a, b + segments, a + segments]]
    bot, top = len(verts) - 2, len(verts) - 1
    last = stacks * segments
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([bot, j, i])
        faces.append([top, last + i, last + j])
    return TriMesh(verts, faces)


def l_bracket(length: float = 0.12, width: float = 0.05, height: float = 0.08,
              thickness: float = 0.02) -> TriMesh:
    """L-shaped closed prism: an extruded L profile in the x-z plane."""
    t = thickness
    profile = np.array([[0, 0], [length, 0], [length, t], [t, t], [t, height], [0, height]], float)
    profile -= profile.mean(axis=0)
    n = len(profile)
    y0, y1 = -0.5 * width, 0.5 * width
    verts = np.concatenate([
        np.column_stack([profile[:, 0], np.full(n, y0), profile[:, 1]]),
        np.column_stack([profile[:, 0], np.full(n, y1), profile[:, 1]]),
    ])
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [[i, j, n + j], [i, n + j, n + i]]
    # the L profile is not convex; triangulate it explicitly (ccw in x-z)
    caps = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5]]
    for a, b, c in caps:
        faces.append([a, c, b])
        faces.append([n + a, n + b, n + c])
    mesh = TriMesh(verts, faces)
    return _orient_outward(mesh)


def icosphere(radius: float = 1.0, subdivisions: int = 2) -> TriMesh:
    p = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0], [0, -1, p], [0, 1, p],
             [0, -1, -p], [0, 1, -p], [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9],
             [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2],
             [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10],
             [8, 6, 7], [9, 8, 1]]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return TriMesh(np.array(verts) * radius, faces)


def random_blob(n_faces_target: int, rng: np.random.Generator, radius: float = 0.1,
                roughness: float = 0.3) -> TriMesh:
    """Closed, star-shaped bumpy sphere with roughly ``n_faces_target`` faces."""
    # a UV sphere has 2*s*(r-1) faces for s segments and r rings
    s = max(4, int(np.sqrt(n_faces_target)))
    r = max(3, n_faces_target // (2 * s) + 1)
    theta = np.linspace(0, np.pi, r + 1)[1:-1]
    phi = 2 * np.pi * np.arange(s) / s
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], -1).reshape(-1, 3)
    dirs = np.concatenate([dirs, [[0, 0, 1], [0, 0, -1]]])
    # smooth random radial field from a few random lobes
    lobes = rng.normal(size=(6, 3))
    lobes /= np.linalg.norm(lobes, axis=1, keepdims=True)
    amp = rng.uniform(-roughness, roughness, size=6)
    scale = 1.0 + (amp[None] * np.exp(4 * (dirs @ lobes.T - 1))).sum(axis=1)
    verts = dirs * (radius * np.clip(scale, 0.3, None))[:, None]
    n_ring = r - 1
    faces = []
    for i in range(n_ring - 1):
        for j in range(s):
            a = i * s + j
            b = i * s + (j + 1) % s
            faces += [[a, a + s, b + s], [a, b + s, b]]
    north, south = n_ring * s, n_ring * s + 1
    for j in range(s):
        faces.append([north, j, (j + 1) % s])
        last = (n_ring - 1) * s
        faces.append([south, last + (j + 1) % s, last + j])
    return _orient_outward(TriMesh(verts, faces))


def triangle_soup(n_faces: int, rng: np.random.Generator, extent: float = 0.2,
                  size: float = 0.02) -> TriMesh:
    """Independent random triangles; not closed."""
    centers = rng.uniform(-extent, extent, size=(n_faces, 1, 3))
    tri = centers + rng.normal(scale=size, size=(n_faces, 3, 3))
    return TriMesh(tri.reshape(-1, 3), np.arange(3 * n_faces).reshape(-1, 3))


def _orient_outward(mesh: TriMesh) -> TriMesh:
    # signed volume < 0 means inward-facing winding
    tri = mesh.triangles()
    vol = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum()
    if vol < 0:
        return TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh
