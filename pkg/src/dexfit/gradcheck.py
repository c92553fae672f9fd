"""Finite-difference verification of every analytic gradient and jacobian.

Random scenes place cloud points a few millimetres off face interiors, so the
nearest face is stable under a 1e-6 parameter step and the depth term is
smooth there; central differences of the true energy are then the oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import primitives
from .camera import CameraView, SurfaceAnchor, look_at, project_points
from .energy import (AnnotationSet, SceneModels, ScenePose, e_depth, e_kpt_hand,
                     e_kpt_object, e_reg, scene_closest, PosedScene)
from .geometry import TriMesh, closest_points_brute_force
from .models import (HandModel, HandPose, RigidPose, rigid_vertex_jacobian, rotation_matrix,
                     rotation_matrix_grad)

FD_STEP = 1e-6
TOLERANCE = 1e-4
SWITCH_MARGIN = 1e-4  # meters between the nearest and second-nearest face
TERMS = ("e_depth", "e_kpt_hand", "e_kpt_object", "e_reg", "hand_jacobian",
         "object_jacobian", "rotation_grad")


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def central_difference(f, x, h: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar or array valued ``f`` at ``x``; the step axis is last."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass
class GradScene:
    models: SceneModels
    pose: ScenePose
    cloud: np.ndarray
    annotations: AnnotationSet


def _random_views(rng, n=3) -> list[CameraView]:
    views = []
    for _ in range(n):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        R, t = look_at(d * rng.uniform(0.6, 0.9), rng.normal(0, 0.02, 3))
        views.append(CameraView(300.0, 300.0, 80.0, 60.0, 160, 120, R, t))
    return views


def _random_object(rng):
    kind = rng.integers(3)
    if kind == 0:
        return primitives.box(rng.uniform(0.04, 0.1, 3), subdiv=2)
    if kind == 1:
        return primitives.cylinder(rng.uniform(0.02, 0.04), rng.uniform(0.06, 0.12), 16, 2)
    return primitives.l_bracket()


def _surface_samples(mesh, rng, n):
    """Points offset a few mm from face interiors, with their generating faces."""
    areas = mesh.face_areas()
    faces = rng.choice(mesh.n_faces, size=n, p=areas / areas.sum())
    bary = rng.dirichlet([3.0, 3.0, 3.0], size=n)
    foot = np.einsum("nk,nka->na", bary, mesh.vertices[mesh.faces[faces]])
    off = rng.uniform(0.5e-3, 3e-3, size=n) * rng.choice([-1.0, 1.0], size=n)
    return foot + off[:, None] * mesh.face_normals()[faces], faces


def _runner_up(meshes, m, f, p) -> float:
    """Distance from ``p`` to the nearest face other than face ``f`` of mesh ``m``."""
    best = np.inf
    for k, mesh in enumerate(meshes):
        faces = np.delete(mesh.faces, f, axis=0) if k == m else mesh.faces
        if len(faces):
            sub = TriMesh(mesh.vertices, faces, validate=False)
            best = min(best, float(closest_points_brute_force(sub, p[None]).distance[0]))
    return best


def random_scene(seed: int, hand: HandModel = None, n_points: int = 80) -> GradScene:
    rng = np.random.default_rng(seed)
    hand = hand or HandModel.procedural()
    n_obj = int(rng.integers(1, 3))
    objects = [_random_object(rng) for _ in range(n_obj)]
    views = _random_views(rng)
    models = SceneModels([hand], objects, views)
    theta = np.concatenate([rng.normal(0, 1.0, 3), rng.normal(0, 0.05, 3),
                            rng.normal(0, 0.25, hand.dim - 6)])
    poses = [RigidPose(rng.normal(0, 1.0, 3), rng.normal(0, 0.08, 3)) for _ in objects]
    P = ScenePose([HandPose(theta)], poses)
    posed = PosedScene(P, models)

    pts, owners, faces = [], [], []
    for m, mesh in enumerate(posed.meshes):
        p, f = _surface_samples(mesh, rng, n_points)
        pts.append(p)
        owners.append(np.full(n_points, m))
        faces.append(f)
    pts, owners, faces = np.concatenate(pts), np.concatenate(owners), np.concatenate(faces)
    # keep points whose nearest face is the one they were generated from, with
    # every other face clearly farther so a tiny step cannot switch faces
    own, face, bary, _, dist = scene_closest(posed, pts)
    keep = (own == owners) & (face == faces) & (bary.min(axis=1) > 0.02)
    for i in np.flatnonzero(keep):
        keep[i] = _runner_up(posed.meshes, owners[i], faces[i], pts[i]) > dist[i] + SWITCH_MARGIN
    cloud = pts[keep]

    ann = AnnotationSet.empty(len(views), 1, n_obj)
    joints = posed.hand_posed[0].joints
    anchors = []
    for o, rest in enumerate(objects):
        f = rng.integers(rest.n_faces, size=2)
        b = rng.dirichlet([3.0, 3.0, 3.0], size=2)
        anchors.append([SurfaceAnchor(int(fi), tuple(bi)) for fi, bi in zip(f, b)])
    for c, view in enumerate(views):
        z = view.to_camera(joints)[:, 2]
        vis = (z > 0.05) & (rng.random(len(joints)) < 0.8)
        ann.hand_vis[c, 0] = vis
        ann.hand_uv[c, 0][vis] = project_points(view, joints[vis]) + rng.normal(0, 3.0, (vis.sum(), 2))
        for o, rest in enumerate(objects):
            world = poses[o].apply(np.array([a.point(rest) for a in anchors[o]]))
            vis_o = view.to_camera(world)[:, 2] > 0.05
            ann.obj_vis[c, o] = vis_o
            if vis_o.any():
                ann.obj_uv[c, o][vis_o] = (project_points(view, world[vis_o])
                                           + rng.normal(0, 3.0, (vis_o.sum(), 2)))
    # every term needs at least one visible keypoint
    ann.hand_vis[0, 0, 0] = ann.hand_vis[0, 0, 0] or view_sees(views[0], joints[0])
    return GradScene(models, P, cloud, ann.with_anchors(anchors))


def view_sees(view, X) -> bool:
    return bool(view.to_camera(np.asarray(X)[None])[0, 2] > 0.05)


@dataclass
class GradReport:
    errors: dict = field(default_factory=lambda: {k: 0.0 for k in TERMS})
    scenes: int = 0

    def update(self, name, err):
        self.errors[name] = max(self.errors[name], err)

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_error <= tol


def check_scene(gs: GradScene, h: float = FD_STEP) -> dict:
    """Max relative error of every term's gradient on one scene."""
    models, P, x0 = gs.models, gs.pose, gs.pose.flat()
    out = {}
    terms = {
        "e_depth": lambda Q, g=True: e_depth(Q, gs.cloud, models, g),
        "e_kpt_hand": lambda Q, g=True: e_kpt_hand(Q, gs.annotations, models, g),
        "e_kpt_object": lambda Q, g=True: e_kpt_object(Q, gs.annotations, models, g),
        "e_reg": lambda Q, g=True: e_reg(Q, g),
    }
    for name, fn in terms.items():
        analytic = fn(P)[1].flat()
        numeric = central_difference(lambda x: fn(P.unflat(x), False)[0], x0, h)
        out[name] = relative_error(analytic, numeric)

    hand = models.hands[0]
    theta = P.hands[0].theta
    dv, dj = hand.jacobian(P.hands[0])

    def fwd(t):
        res = hand.forward(HandPose(t))
        return np.concatenate([res.mesh.vertices, res.joints])

    out["hand_jacobian"] = relative_error(np.concatenate([dv, dj]), central_difference(fwd, theta, h))

    err = 0.0
    for pose, rest in zip(P.objects, models.objects):
        pts = rest.vertices
        jac = rigid_vertex_jacobian(pose, pts)
        num = central_difference(lambda x: RigidPose.from_vector(x).apply(pts), pose.as_vector(), h)
        err = max(err, relative_error(jac, num))
        _, dR = rotation_matrix_grad(pose.rotation)
        numR = central_difference(rotation_matrix, pose.rotation, h)
        out["rotation_grad"] = max(out.get("rotation_grad", 0.0),
                                   relative_error(np.moveaxis(dR, 0, -1), numR))
    out["object_jacobian"] = err
    return out


def run(n_scenes: int = 50, seed: int = 0, h: float = FD_STEP) -> GradReport:
    report = GradReport()
    hand = HandModel.procedural()
    seeds = np.random.SeedSequence(seed).generate_state(n_scenes)
    for s in seeds:
        for name, err in check_scene(random_scene(int(s), hand), h).items():
            report.update(name, err)
        report.scenes += 1
    return report
