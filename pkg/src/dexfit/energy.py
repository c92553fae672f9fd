"""Fitting energy: depth (point-to-mesh distance), keypoint reprojection and
pose regularisation, each with its analytic gradient.

Depth residuals are measured in millimetres, keypoint residuals in pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import CameraView, SurfaceAnchor, project_with_jacobian
from .geometry import TriMesh, build_aabb_tree, closest_points, merge_meshes
from .models import (HandModel, HandPose, RigidPose, N_JOINTS, rigid_forward,
                     rigid_vertex_jacobian, rotation_matrix_grad)

M_TO_MM = 1000.0
N_OBJECT_KEYPOINTS = 2


class EnergyError(ValueError):
    pass


# --- poses and observations --------------------------------------------------

@dataclass
class ScenePose:
    hands: list = field(default_factory=list)     # HandPose per hand
    objects: list = field(default_factory=list)   # RigidPose per object

    def flat(self) -> np.ndarray:
        parts = [h.theta for h in self.hands] + [o.as_vector() for o in self.objects]
        return np.concatenate(parts) if parts else np.zeros(0)

    def unflat(self, x) -> "ScenePose":
        """A pose with this one's layout and values taken from ``x``."""
        x = np.asarray(x, dtype=np.float64)
        hands, i = [], 0
        for h in self.hands:
            hands.append(HandPose(x[i:i + h.theta.size]))
            i += h.theta.size
        objects = []
        for _ in self.objects:
            objects.append(RigidPose.from_vector(x[i:i + 6]))
            i += 6
        if i != x.size:
            raise ValueError("parameter vector does not match the pose layout")
        return ScenePose(hands, objects)

    def copy(self) -> "ScenePose":
        return ScenePose([h.copy() for h in self.hands], [o.copy() for o in self.objects])

    def to_json(self) -> dict:
        return {"hands": [h.theta.tolist() for h in self.hands],
                "objects": [{"rotation": o.rotation.tolist(), "translation": o.translation.tolist()}
                            for o in self.objects]}

    @classmethod
    def from_json(cls, d) -> "ScenePose":
        return cls([HandPose(t) for t in d["hands"]],
                   [RigidPose(o["rotation"], o["translation"]) for o in d["objects"]])


@dataclass
class Gradient:
    hands: list     # (D,) per hand
    objects: list   # (6,) per object: d/d(axis-angle), d/d(translation)

    @classmethod
    def zeros_like(cls, P: ScenePose) -> "Gradient":
        return cls([np.zeros_like(h.theta) for h in P.hands], [np.zeros(6) for _ in P.objects])

    def flat(self) -> np.ndarray:
        parts = list(self.hands) + list(self.objects)
        return np.concatenate(parts) if parts else np.zeros(0)

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient([a + b for a, b in zip(self.hands, other.hands)],
                        [a + b for a, b in zip(self.objects, other.objects)])


@dataclass
class SceneModels:
    """Everything about a sequence that stays fixed: models and calibrated views."""

    hands: list      # HandModel per hand
    objects: list    # rest TriMesh per object
    views: list      # CameraView per camera


@dataclass
class AnnotationSet:
    """2D keypoints with visibility, per view.

    hand_uv  (C, H, 21, 2), hand_vis (C, H, 21)
    obj_uv   (C, O, K, 2),  obj_vis  (C, O, K)
    anchors  per object, per keypoint: SurfaceAnchor on the rest mesh or None
    """

    hand_uv: np.ndarray
    hand_vis: np.ndarray
    obj_uv: np.ndarray
    obj_vis: np.ndarray
    anchors: list

    def __post_init__(self):
        self.hand_uv = np.asarray(self.hand_uv, dtype=np.float64)
        self.hand_vis = np.asarray(self.hand_vis).astype(bool)
        self.obj_uv = np.asarray(self.obj_uv, dtype=np.float64)
        self.obj_vis = np.asarray(self.obj_vis).astype(bool)
        if self.hand_uv.shape[:-1] != self.hand_vis.shape or self.obj_uv.shape[:-1] != self.obj_vis.shape:
            raise ValueError("pixel and visibility arrays disagree in shape")
        if np.any(~np.isfinite(self.hand_uv[self.hand_vis])) or np.any(~np.isfinite(self.obj_uv[self.obj_vis])):
            raise ValueError("visible keypoints must have finite pixels")

    @classmethod
    def empty(cls, n_views: int, n_hands: int, n_objects: int, n_kpt: int = N_OBJECT_KEYPOINTS):
        return cls(np.zeros((n_views, n_hands, N_JOINTS, 2)), np.zeros((n_views, n_hands, N_JOINTS)),
                   np.zeros((n_views, n_objects, n_kpt, 2)), np.zeros((n_views, n_objects, n_kpt)),
                   [[None] * n_kpt for _ in range(n_objects)])

    def with_anchors(self, anchors) -> "AnnotationSet":
        return AnnotationSet(self.hand_uv, self.hand_vis, self.obj_uv, self.obj_vis, anchors)

    def subset_views(self, idx) -> "AnnotationSet":
        return AnnotationSet(self.hand_uv[idx], self.hand_vis[idx], self.obj_uv[idx],
                             self.obj_vis[idx], self.anchors)

    def to_json(self) -> dict:
        """``{view -> {hands: [[u, v, vis] x 21], objects: {keypoints, anchor}}}``."""
        out = {}
        for c in range(self.hand_uv.shape[0]):
            hands = [[[float(u), float(v), int(g)] for (u, v), g in zip(self.hand_uv[c, h], self.hand_vis[c, h])]
                     for h in range(self.hand_uv.shape[1])]
            objs = []
            for o in range(self.obj_uv.shape[1]):
                kp = [[float(u), float(v), int(g)] for (u, v), g in zip(self.obj_uv[c, o], self.obj_vis[c, o])]
                anc = [None if a is None else [a.face, *a.bary] for a in self.anchors[o]]
                objs.append({"keypoints": kp, "anchor": anc})
            out[str(c)] = {"hands": hands, "objects": objs}
        return out

    @classmethod
    def from_json(cls, d: dict) -> "AnnotationSet":
        views = sorted(d, key=int)
        hand = np.array([d[c]["hands"] for c in views], dtype=float).reshape(len(views), -1, N_JOINTS, 3)
        objs = [d[c]["objects"] for c in views]
        n_obj = len(objs[0]) if objs else 0
        n_kpt = len(objs[0][0]["keypoints"]) if n_obj else N_OBJECT_KEYPOINTS
        obj = np.array([[o["keypoints"] for o in row] for row in objs], dtype=float).reshape(
            len(views), n_obj, n_kpt, 3)
        anchors = []
        for o in range(n_obj):
            anchors.append([None if a is None else SurfaceAnchor(int(a[0]), tuple(float(x) for x in a[1:]))
                            for a in objs[0][o]["anchor"]])
        return cls(hand[..., :2], hand[..., 2] > 0.5, obj[..., :2], obj[..., 2] > 0.5, anchors)


@dataclass
class FrameObservation:
    cloud: np.ndarray            # (N, 3) merged world points
    annotations: AnnotationSet


@dataclass
class EnergyReport:
    e_depth: float
    e_kpt_hand: float
    e_kpt_object: float
    e_reg: float

    @property
    def e_total(self) -> float:
        return self.e_depth + self.e_kpt_hand + self.e_kpt_object + self.e_reg

    def to_json(self) -> dict:
        return {"e_depth": self.e_depth, "e_kpt_hand": self.e_kpt_hand,
                "e_kpt_object": self.e_kpt_object, "e_reg": self.e_reg, "e_total": self.e_total}


# --- posing ------------------------------------------------------------------

class PosedScene:
    """Posed meshes and joints for one pose."""

    def __init__(self, P: ScenePose, models: SceneModels):
        if len(P.hands) != len(models.hands) or len(P.objects) != len(models.objects):
            raise EnergyError("pose does not match the scene's hand/object counts")
        self.P = P
        self.models = models
        self.hand_posed = [m.forward(p) for m, p in zip(models.hands, P.hands)]
        self.object_posed = [rigid_forward(p, rest) for p, rest in zip(P.objects, models.objects)]

    @property
    def meshes(self) -> list[TriMesh]:
        return [p.mesh for p in self.hand_posed] + [p.mesh for p in self.object_posed]


def scene_closest(posed: PosedScene, cloud: np.ndarray):
    """Nearest surface over every posed mesh.

    Returns ``(owner, face, bary, q, dist)`` with ``face`` local to the owning
    mesh. The query runs on one merged mesh whose faces are ordered hands
    first, so the lowest-face-index tie rule makes the lowest mesh index win.
    """
    meshes = posed.meshes
    merged = merge_meshes(meshes, validate=False)
    res = closest_points(build_aabb_tree(merged), merged, cloud)
    starts = np.cumsum([0] + [m.n_faces for m in meshes])
    owner = np.searchsorted(starts, res.face, side="right") - 1
    return owner, res.face - starts[owner], res.bary, res.points, res.distance


def barycentric_grad(d, triangle, bary) -> np.ndarray:
    """d||d - (u a + v b + w c)||^2 / d(a, b, c) with (u, v, w) held fixed.

    Returns ``(3, 3)``: rows are a, b, c; columns x, y, z.
    """
    d = np.asarray(d, dtype=np.float64)
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    w = np.asarray(bary, dtype=np.float64).reshape(3)
    r = d - w @ tri
    return -2.0 * w[:, None] * r[None, :]


def _vertex_to_pose_grad(posed: PosedScene, mesh_idx: int, g_vert: np.ndarray, grad: Gradient):
    """Chain a per-vertex gradient ``(V, 3)`` of one mesh into pose space."""
    n_h = len(posed.hand_posed)
    if mesh_idx < n_h:
        model = posed.models.hands[mesh_idx]
        grad.hands[mesh_idx] = grad.hands[mesh_idx] + model.vjp(posed.P.hands[mesh_idx], g_vertices=g_vert)
        return
    o = mesh_idx - n_h
    rest = posed.models.objects[o].vertices
    _, dR = rotation_matrix_grad(posed.P.objects[o].rotation)
    S = g_vert.T @ rest
    g = np.concatenate([np.einsum("iab,ab->i", dR, S), g_vert.sum(axis=0)])
    grad.objects[o] = grad.objects[o] + g


def _depth(posed: PosedScene, cloud, gradient: bool = True):
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    grad = Gradient.zeros_like(posed.P)
    n = len(cloud)
    if n == 0 or not posed.meshes:
        return 0.0, grad
    owner, face, bary, q, dist = scene_closest(posed, cloud)
    value = float(np.sum((dist * M_TO_MM) ** 2) / n)
    if not gradient:
        return value, None
    r = cloud - q
    scale = M_TO_MM**2 / n
    for m, mesh in enumerate(posed.meshes):
        sel = owner == m
        if not np.any(sel):
            continue
        # -2 * u * r for the a-rows, -2 * v * r for b, -2 * w * r for c
        per_corner = -2.0 * scale * bary[sel][:, :, None] * r[sel][:, None, :]
        g_vert = np.zeros((mesh.n_vertices, 3))
        np.add.at(g_vert, mesh.faces[face[sel]].reshape(-1), per_corner.reshape(-1, 3))
        _vertex_to_pose_grad(posed, m, g_vert, grad)
    return value, grad


def _kpt_hand(posed: PosedScene, ann: AnnotationSet, gradient: bool = True):
    grad = Gradient.zeros_like(posed.P)
    vis = ann.hand_vis
    n_vis = int(vis.sum())
    if n_vis == 0:
        raise EnergyError("no visible hand keypoints")
    total = 0.0
    g_joint = [np.zeros((N_JOINTS, 3)) for _ in posed.hand_posed]
    for c, view in enumerate(posed.models.views):
        for h, hp in enumerate(posed.hand_posed):
            idx = np.flatnonzero(vis[c, h])
            if len(idx) == 0:
                continue
            uv, duv = project_with_jacobian(view, hp.joints[idx])
            r = uv - ann.hand_uv[c, h, idx]
            total += float(np.sum(r * r))
            g_joint[h][idx] += 2.0 * np.einsum("na,nab->nb", r, duv)
    if not gradient:
        return total / n_vis, None
    for h, model in enumerate(posed.models.hands):
        grad.hands[h] = model.vjp(posed.P.hands[h], g_joints=g_joint[h]) / n_vis
    return total / n_vis, grad


def anchor_points(models: SceneModels, anchors) -> list[list[Optional[np.ndarray]]]:
    """Object-frame positions of every anchored keypoint."""
    return [[None if a is None else a.point(rest) for a in anchors[o]]
            for o, rest in enumerate(models.objects)]


def _kpt_object(posed: PosedScene, ann: AnnotationSet, gradient: bool = True):
    grad = Gradient.zeros_like(posed.P)
    local = anchor_points(posed.models, ann.anchors)
    vis = ann.obj_vis.copy()
    for o in range(vis.shape[1]):
        for k in range(vis.shape[2]):
            if local[o][k] is None:
                vis[:, o, k] = False
    n_vis = int(vis.sum())
    if n_vis == 0:
        raise EnergyError("no visible object keypoints")
    total = 0.0
    for o, pose in enumerate(posed.P.objects):
        ks = [k for k in range(vis.shape[2]) if local[o][k] is not None]
        if not ks:
            continue
        pts = np.array([local[o][k] for k in ks])
        world = pose.apply(pts)
        jac = rigid_vertex_jacobian(pose, pts)
        g = np.zeros(6)
        for c, view in enumerate(posed.models.views):
            sel = [n for n, k in enumerate(ks) if vis[c, o, k]]
            if not sel:
                continue
            uv, duv = project_with_jacobian(view, world[sel])
            r = uv - ann.obj_uv[c, o, [ks[n] for n in sel]]
            total += float(np.sum(r * r))
            g += 2.0 * np.einsum("na,nab,nbk->k", r, duv, jac[sel])
        grad.objects[o] = g / n_vis
    return total / n_vis, (grad if gradient else None)


def _reg(P: ScenePose, gradient: bool = True):
    grad = Gradient.zeros_like(P)
    n = len(P.hands)
    if n == 0:
        return 0.0, grad
    value = sum(float(h.theta @ h.theta) for h in P.hands) / n
    if not gradient:
        return value, None
    grad.hands = [2.0 * h.theta / n for h in P.hands]
    return value, grad


# --- public term functions ---------------------------------------------------
# each returns (value, Gradient); with gradient=False the second item is None

def e_depth(P: ScenePose, cloud, models: SceneModels, gradient: bool = True):
    return _depth(PosedScene(P, models), cloud, gradient)


def e_kpt_hand(P: ScenePose, annotations: AnnotationSet, models: SceneModels,
               gradient: bool = True):
    return _kpt_hand(PosedScene(P, models), annotations, gradient)


def e_kpt_object(P: ScenePose, annotations: AnnotationSet, models: SceneModels,
                 gradient: bool = True):
    return _kpt_object(PosedScene(P, models), annotations, gradient)


def e_reg(P: ScenePose, gradient: bool = True):
    return _reg(P, gradient)


def e_total(P: ScenePose, obs: FrameObservation, models: SceneModels) -> tuple[EnergyReport, Gradient]:
    """All four terms and the summed gradient.

    A keypoint term is skipped only when the scene has no entity of that
    kind; with hands/objects present but nothing visible it raises.
    """
    posed = PosedScene(P, models)
    vd, gd = _depth(posed, obs.cloud)
    vh, gh = _kpt_hand(posed, obs.annotations) if P.hands else (0.0, Gradient.zeros_like(P))
    vo, go = _kpt_object(posed, obs.annotations) if P.objects else (0.0, Gradient.zeros_like(P))
    vr, gr = _reg(P)
    return EnergyReport(vd, vh, vo, vr), gd + gh + go + gr
