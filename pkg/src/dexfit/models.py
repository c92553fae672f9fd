"""Differentiable meshes: rigid objects and a skinned 21-joint hand.

The hand keeps the interface of a learned parametric hand (pose embedding
``theta`` of size 51 by default, frozen 10-d shape ``beta``, 21 joints) but its
geometry is a procedural tube model so no external assets are needed.

Pose vector layout (before the linear basis)::

    [0:3]   root axis-angle (about the wrist)
    [3:6]   root translation (meters)
    [6:51]  axis-angle for the 15 articulated joints, in ``ARTICULATED`` order
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import TriMesh, load_mesh, save_mesh

N_JOINTS = 21
# parent of each joint; 0 is the wrist, then 4 joints per finger (base .. tip)
PARENTS = np.array([-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19])
TIPS = (4, 8, 12, 16, 20)
ARTICULATED = tuple(j for j in range(1, N_JOINTS) if j not in TIPS)
FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")
POSE_DIM = 6 + 3 * len(ARTICULATED)
SHAPE_DIM = 10


# --- rotations ---------------------------------------------------------------

def skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _rodrigues_coeffs(theta: float):
    """sin(t)/t, (1-cos t)/t^2 and their derivatives divided by t."""
    if theta < 1e-2:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2**3 / 5040.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2**3 / 40320.0
        da = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0 + t2**3 / 45360.0
        db = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0 + t2**3 / 453600.0
        return a, b, da, db
    s, c = np.sin(theta), np.cos(theta)
    a = s / theta
    b = (1.0 - c) / theta**2
    da = (theta * c - s) / theta**3
    db = (theta * s - 2.0 * (1.0 - c)) / theta**4
    return a, b, da, db


def rotation_matrix(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    a, b, _, _ = _rodrigues_coeffs(float(np.linalg.norm(w)))
    K = skew(w)
    return np.eye(3) + a * K + b * (K @ K)


def rotation_matrix_grad(w) -> tuple[np.ndarray, np.ndarray]:
    """R(w) and dR/dw_i stacked as ``(3, 3, 3)`` with i on the first axis."""
    w = np.asarray(w, dtype=np.float64)
    a, b, da, db = _rodrigues_coeffs(float(np.linalg.norm(w)))
    K = skew(w)
    K2 = K @ K
    R = np.eye(3) + a * K + b * K2
    dR = np.empty((3, 3, 3))
    for i in range(3):
        E = skew(np.eye(3)[i])
        dR[i] = da * w[i] * K + a * E + db * w[i] * K2 + b * (E @ K + K @ E)
    return R, dR


def _vee(S: np.ndarray) -> np.ndarray:
    return np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]]) * 0.5


def _left_jacobian_coeff(theta: float) -> float:
    """(1 - sin(t)/t) / t^2."""
    if theta < 1e-2:
        t2 = theta * theta
        return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2**3 / 362880.0
    return (theta - np.sin(theta)) / theta**3


def angular_axes(w) -> tuple[np.ndarray, np.ndarray]:
    """R(w) and the 3 vectors s_i with dR/dw_i = [s_i]x R.

    The s_i are the columns of the left Jacobian I + B K + C K^2, returned as rows.
    """
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    a, b, _, _ = _rodrigues_coeffs(theta)
    K = skew(w)
    K2 = K @ K
    R = np.eye(3) + a * K + b * K2
    J = np.eye(3) + b * K + _left_jacobian_coeff(theta) * K2
    return R, J.T.copy()


def canonical_axis_angle(w) -> np.ndarray:
    """Equivalent axis-angle with magnitude in [0, pi]."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    if theta <= np.pi:
        return w.copy()
    wrapped = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    return w * (wrapped / theta)


def axis_angle_from_matrix(R) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def rotation_angle_between(Ra, Rb) -> float:
    """Geodesic angle (radians) between two rotation matrices."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# --- rigid objects -----------------------------------------------------------

@dataclass
class RigidPose:
    rotation: np.ndarray      # axis-angle, radians
    translation: np.ndarray   # meters

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3).copy()
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t) -> "RigidPose":
        return cls(axis_angle_from_matrix(R), t)

    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def from_vector(cls, x) -> "RigidPose":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:3], x[3:6])

    def canonical(self) -> "RigidPose":
        return RigidPose(canonical_axis_angle(self.rotation), self.translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.matrix().T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self`` applied after ``other``."""
        R = self.matrix() @ other.matrix()
        return RigidPose.from_matrix(R, self.matrix() @ other.translation + self.translation)

    def copy(self) -> "RigidPose":
        return RigidPose(self.rotation, self.translation)


class PosedModel(NamedTuple):
    mesh: TriMesh
    joints: Optional[np.ndarray] = None


def rigid_forward(pose: RigidPose, rest: TriMesh) -> PosedModel:
    return PosedModel(rest.with_vertices(pose.apply(rest.vertices)))


def rigid_vertex_jacobian(pose: RigidPose, points) -> np.ndarray:
    """d(R p + t)/d(w, t) for ``(N, 3)`` object-frame points, shape ``(N, 3, 6)``."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _, dR = rotation_matrix_grad(pose.rotation)
    J = np.empty((len(p), 3, 6))
    J[:, :, :3] = np.einsum("iab,nb->nai", dR, p)
    J[:, :, 3:] = np.eye(3)
    return J


def rigid_jacobian(pose: RigidPose, vertex) -> np.ndarray:
    return rigid_vertex_jacobian(pose, vertex)[0]


# --- hand --------------------------------------------------------------------

@dataclass
class HandPose:
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1).copy()

    def copy(self) -> "HandPose":
        return HandPose(self.theta)


class HandModelError(ValueError):
    pass


class HandModel:
    """Linear-blend-skinned hand driven by a pose embedding.

    ``basis`` maps the embedding (size D) to the 51-entry pose vector; the
    default is the identity. ``beta`` is frozen: it displaces rest vertices
    along ``shape_dirs`` by ``shape_basis @ beta`` millimetres.
    """

    def __init__(self, rest_mesh: TriMesh, rest_joints, weights, parents=PARENTS,
                 basis=None, beta=None, shape_dirs=None, shape_basis=None,
                 joint_depth=None):
        self.rest_mesh = rest_mesh
        self.parents = np.asarray(parents, dtype=np.int64)
        self.rest_joints = np.asarray(rest_joints, dtype=np.float64).reshape(N_JOINTS, 3)
        self.weights = np.asarray(weights, dtype=np.float64)
        nv = rest_mesh.n_vertices
        self.basis = np.eye(POSE_DIM) if basis is None else np.asarray(basis, dtype=np.float64)
        self.beta = np.zeros(SHAPE_DIM) if beta is None else np.asarray(beta, dtype=np.float64)
        self.shape_dirs = np.zeros((nv, 3)) if shape_dirs is None else np.asarray(shape_dirs, float)
        self.shape_basis = (np.zeros((nv, SHAPE_DIM)) if shape_basis is None
                            else np.asarray(shape_basis, float))
        self.joint_depth = (np.zeros(N_JOINTS) if joint_depth is None
                            else np.asarray(joint_depth, float))
        self._validate()
        offs = (self.shape_basis @ self.beta) * 1e-3
        self.shaped_vertices = rest_mesh.vertices + offs[:, None] * self.shape_dirs
        # subtree[a, k] = 1 when joint k is a or one of its descendants
        sub = np.eye(N_JOINTS)
        for k in range(N_JOINTS):
            p = self.parents[k]
            while p >= 0:
                sub[p, k] = 1.0
                p = self.parents[p]
        self.subtree = sub
        self.subtree_weights = self.weights @ sub.T
        # sparse skinning: (vertex, joint, weight) triplets sorted by vertex
        self._wv, self._wj = np.nonzero(self.weights)
        self._ww = self.weights[self._wv, self._wj]
        self._wstart = np.flatnonzero(np.r_[True, np.diff(self._wv) > 0])
        self._wlocal = self.shaped_vertices[self._wv] - self.rest_joints[self._wj]

    def _validate(self):
        nv = self.rest_mesh.n_vertices
        if self.parents.shape != (N_JOINTS,) or self.parents[0] != -1:
            raise HandModelError("joint tree must have 21 joints rooted at the wrist")
        if np.any(self.parents[1:] < 0) or np.any(self.parents[1:] >= np.arange(1, N_JOINTS)):
            raise HandModelError("parents must precede their children")
        if self.weights.shape != (nv, N_JOINTS):
            raise HandModelError("weights must be (n_vertices, 21)")
        if np.any(self.weights < 0) or np.abs(self.weights.sum(axis=1) - 1.0).max() > 1e-9:
            raise HandModelError("skinning weights must be non-negative rows summing to 1")
        if self.basis.shape[0] != POSE_DIM:
            raise HandModelError(f"basis must have {POSE_DIM} rows")
        if self.beta.shape != (SHAPE_DIM,):
            raise HandModelError(f"beta must have {SHAPE_DIM} entries")

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def zero_pose(self) -> HandPose:
        return HandPose(np.zeros(self.dim))

    @property
    def shaped_mesh(self) -> TriMesh:
        return self.rest_mesh.with_vertices(self.shaped_vertices)

    # the FK below is shared by forward and jacobian
    def _kinematics(self, theta, with_axes: bool = True):
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.shape != (self.dim,):
            raise HandModelError(f"theta has {theta.size} entries, model expects {self.dim}")
        pvec = self.basis @ theta
        local = {0: pvec[0:3]}
        for n, j in enumerate(ARTICULATED):
            local[j] = pvec[6 + 3 * n: 9 + 3 * n]
        rot = np.empty((N_JOINTS, 3, 3))
        pos = np.empty((N_JOINTS, 3))
        axes = {}
        J = self.rest_joints
        for j in range(N_JOINTS):
            p = self.parents[j]
            if j in local and with_axes:
                Rl, s = angular_axes(local[j])
            elif j in local:
                Rl, s = rotation_matrix(local[j]), None
            else:
                Rl, s = np.eye(3), None
            if p < 0:
                rot[j] = Rl
                pos[j] = J[0] + pvec[3:6]
                if s is not None:
                    axes[j] = s
            else:
                rot[j] = rot[p] @ Rl
                pos[j] = rot[p] @ (J[j] - J[p]) + pos[p]
                if s is not None:
                    axes[j] = s @ rot[p].T
        return rot, pos, axes

    def _per_joint_vertices(self, rot, pos):
        local = self.shaped_vertices[:, None, :] - self.rest_joints[None]
        return np.einsum("jab,vjb->vja", rot, local) + pos[None]

    def _skin(self, rot, pos):
        """Per-triplet transformed vertices and the blended vertex positions."""
        per = np.einsum("tab,tb->ta", rot[self._wj], self._wlocal) + pos[self._wj]
        verts = np.add.reduceat(self._ww[:, None] * per, self._wstart, axis=0)
        return per, verts

    def forward(self, pose: HandPose) -> PosedModel:
        rot, pos, _ = self._kinematics(pose.theta, with_axes=False)
        _, verts = self._skin(rot, pos)
        return PosedModel(self.rest_mesh.with_vertices(verts), pos)

    def vjp(self, pose: HandPose, g_vertices=None, g_joints=None) -> np.ndarray:
        """``g . d(vertices, joints)/d(theta)`` without forming the jacobian.

        ``g_vertices`` is ``(V, 3)``, ``g_joints`` is ``(21, 3)``; either may be None.
        """
        rot, pos, axes = self._kinematics(pose.theta)
        gv = np.zeros((self.rest_mesh.n_vertices, 3)) if g_vertices is None else np.asarray(g_vertices, float)
        gj = np.zeros((N_JOINTS, 3)) if g_joints is None else np.asarray(g_joints, float)
        per, _ = self._skin(rot, pos)
        wg = self._ww[:, None] * gv[self._wv]
        # per joint j: sum of w (A_j v) x g and of w g over its skinned vertices
        C = np.zeros((N_JOINTS, 3))
        S = np.zeros((N_JOINTS, 3))
        np.add.at(C, self._wj, np.cross(per, wg))
        np.add.at(S, self._wj, wg)
        C += np.cross(pos, gj)
        S += gj
        C_sub = self.subtree @ C
        S_sub = self.subtree @ S
        out = np.zeros(POSE_DIM)
        out[3:6] = S.sum(axis=0)
        for n, a in enumerate([0] + list(ARTICULATED)):
            col = 0 if a == 0 else 6 + 3 * (n - 1)
            moment = C_sub[a] - np.cross(pos[a], S_sub[a])
            out[col:col + 3] = axes[a] @ moment
        return self.basis.T @ out

    def jacobian(self, pose: HandPose) -> tuple[np.ndarray, np.ndarray]:
        """d(vertices)/d(theta) ``(V, 3, D)`` and d(joints)/d(theta) ``(21, 3, D)``."""
        rot, pos, axes = self._kinematics(pose.theta)
        per_joint = self._per_joint_vertices(rot, pos)
        weighted = self.weights[:, :, None] * per_joint
        nv = self.rest_mesh.n_vertices
        dv = np.zeros((nv, 3, POSE_DIM))
        dj = np.zeros((N_JOINTS, 3, POSE_DIM))
        dv[:, :, 3:6] = np.eye(3)
        dj[:, :, 3:6] = np.eye(3)
        for n, a in enumerate([0] + list(ARTICULATED)):
            cols = slice(0, 3) if a == 0 else slice(6 + 3 * (n - 1), 9 + 3 * (n - 1))
            members = np.flatnonzero(self.subtree[a])
            lever_v = (weighted[:, members].sum(axis=1)
                       - self.subtree_weights[:, a, None] * pos[a])
            lever_j = pos[members] - pos[a]
            for i, s in enumerate(axes[a]):
                dv[:, :, cols.start + i] = np.cross(s, lever_v)
                dj[members, :, cols.start + i] = np.cross(s, lever_j)
        return dv @ self.basis, dj @ self.basis

    # --- persistence ---------------------------------------------------------

    def to_json(self) -> dict:
        v, j = np.nonzero(self.weights)
        triplets = [[int(a), int(b), float(w)] for a, b, w in zip(v, j, self.weights[v, j])]
        basis = ({"type": "identity"} if self.basis.shape == (POSE_DIM, POSE_DIM)
                 and np.array_equal(self.basis, np.eye(POSE_DIM))
                 else {"type": "matrix", "matrix": self.basis.tolist()})
        return {"parents": self.parents.tolist(), "rest_joints": self.rest_joints.tolist(),
                "weights": triplets, "basis": basis, "beta": self.beta.tolist(),
                "shape_dirs": self.shape_dirs.tolist(), "shape_basis": self.shape_basis.tolist(),
                "joint_depth": self.joint_depth.tolist()}

    def save(self, mesh_path, sidecar_path) -> None:
        save_mesh(self.rest_mesh, mesh_path)
        Path(sidecar_path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, mesh_path, sidecar_path) -> "HandModel":
        mesh = load_mesh(mesh_path)
        d = json.loads(Path(sidecar_path).read_text())
        w = np.zeros((mesh.n_vertices, N_JOINTS))
        for v, j, x in d["weights"]:
            w[int(v), int(j)] = x
        spec = d.get("basis", {"type": "identity"})
        basis = None if spec["type"] == "identity" else np.array(spec["matrix"], float)
        return cls(mesh, d["rest_joints"], w, d["parents"], basis=basis, beta=d.get("beta"),
                   shape_dirs=d.get("shape_dirs"), shape_basis=d.get("shape_basis"),
                   joint_depth=d.get("joint_depth"))

    # --- procedural geometry -------------------------------------------------

    @classmethod
    def procedural(cls, finger_segments: int = 10, finger_stations: int = 14,
                   palm_segments: int = 11, palm_stations: int = 6, beta=None,
                   basis=None, side: str = "right") -> "HandModel":
        """Tube hand; the defaults give a 778-vertex, 1532-face mesh."""
        return _build_procedural(finger_segments, finger_stations, palm_segments,
                                 palm_stations, beta, basis, side)


# finger base joint, direction (in the palm plane), phalanx lengths, base/tip radius
_FINGERS = [
    ((0.040, 0.020, -0.004), (0.62, 0.72, -0.30), (0.040, 0.032, 0.030), 0.0105, 0.0085),
    ((0.030, 0.090, 0.0), (0.12, 1.0, 0.0), (0.042, 0.026, 0.022), 0.0090, 0.0075),
    ((0.010, 0.094, 0.0), (0.02, 1.0, 0.0), (0.046, 0.030, 0.023), 0.0092, 0.0077),
    ((-0.010, 0.090, 0.0), (-0.08, 1.0, 0.0), (0.043, 0.028, 0.022), 0.0088, 0.0074),
    ((-0.029, 0.080, 0.0), (-0.18, 1.0, 0.0), (0.034, 0.021, 0.019), 0.0080, 0.0066),
]
_BLEND = 0.006  # half-width of the weight ramp around each finger joint (m)


def _tube(centers, e1, e2, rx, rz, n_around, start_cap, end_cap):
    """Closed tube: rings around ``centers`` plus two cap apexes."""
    ang = 2 * np.pi * np.arange(n_around) / n_around
    ring = (rx[:, None, None] * np.cos(ang)[None, :, None] * e1[:, None, :]
            + rz[:, None, None] * np.sin(ang)[None, :, None] * e2[:, None, :])
    verts = (centers[:, None, :] + ring).reshape(-1, 3)
    dirs = (ring / np.linalg.norm(ring, axis=2, keepdims=True)).reshape(-1, 3)
    ns = len(centers)
    faces = []
    for s in range(ns - 1):
        for i in range(n_around):
            j = (i + 1) % n_around
            a, b = s * n_around + i, s * n_around + j
            faces += [[a, b, b + n_around], [a, b + n_around, a + n_around]]
    i0, i1 = ns * n_around, ns * n_around + 1
    last = (ns - 1) * n_around
    for i in range(n_around):
        j = (i + 1) % n_around
        faces.append([i0, j, i])
        faces.append([i1, last + i, last + j])
    verts = np.concatenate([verts, [start_cap, end_cap]])
    faces = np.array(faces)
    tri = verts[faces]
    vol = np.einsum("ij,ij->i", tri[:, 0] - centers.mean(0),
                    np.cross(tri[:, 1] - centers.mean(0), tri[:, 2] - centers.mean(0))).sum()
    if vol < 0:
        faces = faces[:, ::-1]
    return verts, faces, dirs


def _build_procedural(nf, sf, npalm, spalm, beta, basis, side):
    joints = np.zeros((N_JOINTS, 3))
    depth = np.zeros(N_JOINTS)
    depth[0] = 0.02
    verts, faces, weights, sdirs, sbasis = [], [], [], [], []
    offset = 0

    def add(v, f, w, d, sb):
        nonlocal offset
        verts.append(v)
        faces.append(f + offset)
        weights.append(w)
        sdirs.append(d)
        sbasis.append(sb)
        offset += len(v)

    for k, (base, direc, lengths, r0, r1) in enumerate(_FINGERS):
        base = np.array(base)
        u = np.array(direc) / np.linalg.norm(direc)
        chain = [1 + 4 * k + i for i in range(4)]
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        for i, j in enumerate(chain):
            joints[j] = base + cum[i] * u
        total = cum[-1]
        e2 = np.cross(u, [1.0, 0.0, 0.0]) if k == 0 else np.array([0.0, 0.0, 1.0])
        e2 = e2 - (e2 @ u) * u
        e2 /= np.linalg.norm(e2)
        e1 = np.cross(e2, u)
        s = np.linspace(0.0, total - 0.6 * r1, sf)
        radius = r0 + (r1 - r0) * s / total
        for i, j in enumerate(chain[:3]):
            depth[j] = r0 + (r1 - r0) * cum[i] / total
        v, f, d = _tube(base + s[:, None] * u, np.tile(e1, (sf, 1)), np.tile(e2, (sf, 1)),
                        radius, 0.85 * radius, nf, base - 0.3 * r0 * u, joints[chain[3]])
        s_all = np.concatenate([np.repeat(s, nf), [0.0, total]])
        w = np.zeros((len(v), N_JOINTS))
        for n, sv in enumerate(s_all):
            # owning segment plus a linear ramp across each interior joint
            seg = 0 if sv < cum[1] else (1 if sv < cum[2] else 2)
            w[n, chain[seg]] = 1.0
            for jj in (1, 2):
                if abs(sv - cum[jj]) < _BLEND:
                    t = (sv - (cum[jj] - _BLEND)) / (2 * _BLEND)
                    w[n] = 0.0
                    w[n, chain[jj - 1]] = 1.0 - t
                    w[n, chain[jj]] = t
            if sv < _BLEND:
                t = (sv + _BLEND) / (2 * _BLEND)
                w[n] = 0.0
                w[n, 0] = 1.0 - t
                w[n, chain[0]] = t
        d = np.concatenate([d, [-u, u]])
        sb = np.zeros((len(v), SHAPE_DIM))
        sb[:, 0] = 1.0
        sb[:, 1 + k] = 1.0
        sb[:, 7] = np.cos(np.pi * s_all / total)
        add(v, f, w, d, sb)

    # palm: flattened tube from behind the wrist to just short of the knuckles
    ys = np.linspace(-0.012, 0.084, spalm)
    half_w = np.interp(ys, [-0.012, 0.03, 0.084], [0.030, 0.044, 0.042])
    half_t = np.interp(ys, [-0.012, 0.084], [0.017, 0.013])
    centers = np.column_stack([np.zeros(spalm), ys, np.zeros(spalm)])
    ex = np.tile([1.0, 0.0, 0.0], (spalm, 1))
    ez = np.tile([0.0, 0.0, 1.0], (spalm, 1))
    v, f, d = _tube(centers, ex, ez, half_w, half_t, npalm,
                    np.array([0.0, ys[0] - 0.006, 0.0]), np.array([0.0, ys[-1] + 0.004, 0.0]))
    w = np.zeros((len(v), N_JOINTS))
    w[:, 0] = 1.0
    d = np.concatenate([d, [[0.0, -1.0, 0.0], [0.0, 1.0, 0.0]]])
    sb = np.zeros((len(v), SHAPE_DIM))
    sb[:, 0] = 1.0
    sb[:, 6] = 1.0
    sb[:, 8] = np.concatenate([np.cos(np.pi * (ys - ys[0]) / (ys[-1] - ys[0])).repeat(npalm),
                               [1.0, -1.0]])
    sb[:, 9] = np.sign(v[:, 2])
    add(v, f, w, d, sb)

    V = np.concatenate(verts)
    F = np.concatenate(faces)
    W = np.concatenate(weights)
    D = np.concatenate(sdirs)
    if side == "left":
        V = V * [-1.0, 1.0, 1.0]
        D = D * [-1.0, 1.0, 1.0]
        joints = joints * [-1.0, 1.0, 1.0]
        F = F[:, ::-1]
    elif side != "right":
        raise HandModelError("side must be 'right' or 'left'")
    return HandModel(TriMesh(V, F), joints, W, PARENTS, basis=basis, beta=beta,
                     shape_dirs=D, shape_basis=np.concatenate(sbasis), joint_depth=depth)
