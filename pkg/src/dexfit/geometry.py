"""Triangle meshes, AABB trees and the queries built on them.

Distances are unsigned; sidedness comes from :func:`is_inside` (ray parity),
which only the grasp collision tests need.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels as K


class MeshError(ValueError):
    pass


# faces whose |cross(ab, ac)| falls below this fraction of the squared longest
# edge are treated as degenerate
_DEGENERATE_RTOL = 1e-12
_EDGE_TOL = 1e-9

# fixed, deliberately irrational-looking directions for the parity test;
# the next one is tried whenever a ray grazes an edge or vertex
_PARITY_DIRS = np.array([
    [0.5773502691896258, 0.5773502691896258, 0.5773502691896258],
    [0.2672612419124244, -0.5345224838248488, 0.8017837257372732],
    [-0.7071067811865475, 0.3090169943749474, 0.6360098247239064],
    [0.1230914909793327, 0.9847319278346618, -0.1230914909793327],
    [-0.4082482904638630, -0.4082482904638630, -0.8164965809277261],
    [0.9128709291752769, 0.3651483716701107, -0.1825741858350554],
    [-0.2357022603955158, 0.9428090415820634, 0.2357022603955158],
    [0.6030226891555273, -0.3015113445777636, -0.7385489458759964],
])
_PARITY_DIRS = _PARITY_DIRS / np.linalg.norm(_PARITY_DIRS, axis=1, keepdims=True)


class TriMesh:
    """Vertices ``(V, 3)`` in meters and faces ``(F, 3)`` of vertex indices."""

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        self._closed = None
        if validate:
            self.validate()

    def __repr__(self):
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"

    def validate(self) -> None:
        v, f = self.vertices, self.faces
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if len(f) == 0:
            return
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError("face with repeated vertex index")
        bad = degenerate_faces(v, f)
        if len(bad):
            raise MeshError(f"degenerate face(s) with zero area: {bad[:5].tolist()}")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same topology, new positions (used for posed copies; not re-validated)."""
        out = TriMesh(vertices, self.faces, validate=False)
        out._closed = self._closed
        return out

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def is_closed(self) -> bool:
        """Every undirected edge is shared by exactly two faces."""
        if self._closed is None:
            if self.n_faces == 0:
                self._closed = False
            else:
                e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                    self.faces[:, [2, 0]]])
                e.sort(axis=1)
                _, counts = np.unique(e, axis=0, return_counts=True)
                self._closed = bool(np.all(counts == 2))
        return self._closed

    def require_closed(self) -> None:
        if not self.is_closed():
            raise MeshError("mesh not closed")

    def point_at(self, face: int, bary) -> np.ndarray:
        a, b, c = self.vertices[self.faces[face]]
        u, v, w = bary
        return u * a + v * b + w * c


def degenerate_faces(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = vertices[faces]
    e = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]], axis=1)
    longest2 = np.max(np.einsum("fij,fij->fi", e, e), axis=1)
    cross = np.linalg.norm(np.cross(e[:, 0], -e[:, 2]), axis=1)
    return np.flatnonzero(~(cross > _DEGENERATE_RTOL * longest2))


def merge_meshes(meshes, validate: bool = True) -> TriMesh:
    """One mesh holding every input's faces, in input order."""
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces), validate=validate)


@dataclass(frozen=True, eq=False)
class AabbTree:
    box_min: np.ndarray
    box_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    n_faces: int

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    def height(self) -> int:
        depth = np.zeros(self.n_nodes, np.int64)
        for node in range(self.n_nodes):
            if self.left[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max()) + 1

    def _arrays(self):
        return (self.box_min, self.box_max, self.left, self.right, self.start,
                self.count, self.order)


class ClosestPointResult(NamedTuple):
    point: np.ndarray
    face: int
    bary: tuple
    distance: float


class ClosestPoints(NamedTuple):
    """Array form of a batch of :class:`ClosestPointResult`."""

    points: np.ndarray   # (N, 3)
    bary: np.ndarray     # (N, 3)
    face: np.ndarray     # (N,)
    distance: np.ndarray  # (N,)

    def __len__(self):
        return len(self.face)

    def row(self, i: int) -> ClosestPointResult:
        return ClosestPointResult(self.points[i].copy(), int(self.face[i]),
                                  tuple(float(x) for x in self.bary[i]),
                                  float(self.distance[i]))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if not n > 0:
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d / n)


class RayHit(NamedTuple):
    face: int
    t: float
    bary: tuple


def build_aabb_tree(mesh: TriMesh) -> AabbTree:
    """Median split on the longest node axis, at most 4 faces per leaf."""
    if mesh.n_faces == 0:
        raise MeshError("empty mesh")
    tri = mesh.triangles()
    arrays = K.build_tree(tri.min(axis=1), tri.max(axis=1), tri.mean(axis=1))
    return AabbTree(*arrays, n_faces=mesh.n_faces)


def _check(tree: AabbTree, mesh: TriMesh) -> None:
    if tree.n_faces != mesh.n_faces:
        raise ValueError("tree was built for a different mesh")


def _as_points(points) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))


def closest_points(tree: AabbTree, mesh: TriMesh, points) -> ClosestPoints:
    _check(tree, mesh)
    pts = _as_points(points)
    if len(pts) == 0:
        return ClosestPoints(np.empty((0, 3)), np.empty((0, 3)), np.empty(0, np.int64), np.empty(0))
    return ClosestPoints(*K.closest_points_tree(pts, mesh.vertices, mesh.faces, *tree._arrays()))


def closest_points_brute_force(mesh: TriMesh, points) -> ClosestPoints:
    """Exhaustive scan over every face, lowest face index wins ties."""
    pts = _as_points(points)
    if len(pts) == 0:
        return ClosestPoints(np.empty((0, 3)), np.empty((0, 3)), np.empty(0, np.int64), np.empty(0))
    return ClosestPoints(*K.closest_points_brute(pts, mesh.vertices, mesh.faces))


def closest_point(tree: AabbTree, mesh: TriMesh, p) -> ClosestPointResult:
    return closest_points(tree, mesh, np.asarray(p, dtype=np.float64).reshape(1, 3)).row(0)


def distance_batch(tree: AabbTree, mesh: TriMesh, points) -> list[ClosestPointResult]:
    res = closest_points(tree, mesh, points)
    return [res.row(i) for i in range(len(res))]


def inside_batch(tree: AabbTree, mesh: TriMesh, points) -> np.ndarray:
    _check(tree, mesh)
    mesh.require_closed()
    pts = _as_points(points)
    if len(pts) == 0:
        return np.zeros(0, bool)
    return K.inside_tree(pts, _PARITY_DIRS, mesh.vertices, mesh.faces, *tree._arrays(), _EDGE_TOL)


def is_inside(tree: AabbTree, mesh: TriMesh, p) -> bool:
    return bool(inside_batch(tree, mesh, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def ray_cast_batch(tree: AabbTree, mesh: TriMesh, origins, directions):
    """Nearest hits for many rays: ``(face, t, bary)`` arrays, face = -1 on a miss."""
    _check(tree, mesh)
    o = _as_points(origins)
    d = _as_points(directions)
    if len(o) != len(d):
        raise ValueError("origins and directions differ in length")
    if len(o) == 0:
        return np.empty(0, np.int64), np.empty(0), np.empty((0, 3))
    return K.ray_cast_tree(o, d, mesh.vertices, mesh.faces, *tree._arrays())


def ray_cast(tree: AabbTree, mesh: TriMesh, ray: Ray) -> Optional[RayHit]:
    face, t, bary = ray_cast_batch(tree, mesh, ray.origin[None], ray.direction[None])
    if face[0] < 0:
        return None
    return RayHit(int(face[0]), float(t[0]), tuple(float(x) for x in bary[0]))


# --- ASCII mesh format -------------------------------------------------------

def save_mesh(mesh: TriMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {i} {j} {k}" for i, j, k in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh:
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        tag, rest = parts[0], parts[1:]
        if tag == "v" and len(rest) == 3:
            verts.append([float(x) for x in rest])
        elif tag == "f" and len(rest) == 3:
            faces.append([int(x) for x in rest])
        else:
            raise MeshError(f"{path}:{lineno}: unrecognised line {line!r}")
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
