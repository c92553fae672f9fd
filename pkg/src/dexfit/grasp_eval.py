"""Handover grasp scoring: matching, coverage, precision and epsilon sweeps.

Grasps are SE(3) points: translation ``t`` (meters) and unit quaternion ``q``
stored as (w, x, y, z). ``q`` and ``-q`` are the same grasp.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .geometry import TriMesh, build_aabb_tree, closest_points, inside_batch
from .models import RigidPose, rigid_forward

SURFACE_TOL = 1e-4
FPS_LAMBDA = 0.1  # meters per radian
EPS_RANGE = (0.0, 0.07)
EPS_STEPS = 15


class Grasp(NamedTuple):
    t: np.ndarray
    q: np.ndarray


class GraspSet:
    """Ordered grasps as arrays ``t (N, 3)`` and ``q (N, 4)``."""

    def __init__(self, t, q):
        t = np.asarray(t, dtype=np.float64).reshape(-1, 3)
        q = np.asarray(q, dtype=np.float64).reshape(-1, 4)
        if len(t) != len(q):
            raise ValueError("translations and quaternions differ in count")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise ValueError("non-finite grasp")
        n = np.linalg.norm(q, axis=1)
        if np.any(np.abs(n - 1.0) > 1e-6):
            raise ValueError("grasp quaternions must be unit length")
        self.t = t
        self.q = q / n[:, None] if len(q) else q

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Grasp(self.t[idx].copy(), self.q[idx].copy())
        return GraspSet(self.t[idx], self.q[idx])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def empty(cls) -> "GraspSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)))

    @classmethod
    def from_grasps(cls, grasps: Sequence[Grasp]) -> "GraspSet":
        if not grasps:
            return cls.empty()
        return cls([g.t for g in grasps], [g.q for g in grasps])

    def rotations(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros((0, 3, 3))
        return Rotation.from_quat(self.q, scalar_first=True).as_matrix()

    def to_json(self) -> list:
        return [{"t": t.tolist(), "q": q.tolist()} for t, q in zip(self.t, self.q)]

    @classmethod
    def from_json(cls, items) -> "GraspSet":
        if not items:
            return cls.empty()
        return cls([g["t"] for g in items], [g["q"] for g in items])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "GraspSet":
        return cls.from_json(json.loads(Path(path).read_text()))


# reference sets are plain grasp sets whose members passed the mesh test
ReferenceSet = GraspSet


@dataclass(frozen=True)
class MatchConfig:
    sigma_t: float = 0.05               # meters
    sigma_q: float = np.deg2rad(15.0)   # radians

    def __post_init__(self):
        if not self.sigma_t > 0:
            raise ValueError("sigma_t must be positive")
        if not 0.0 < self.sigma_q < np.pi:
            raise ValueError("sigma_q must lie in (0, 180) degrees")


class GripperTemplate:
    """Points on the gripper surface in the gripper frame (approach = +z)."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("gripper template needs at least one point")
        self.points = pts

    @classmethod
    def parallel_jaw(cls, opening: float = 0.085, spacing: float = 0.01) -> "GripperTemplate":
        """Two fingers, a palm bar and a stem; the grasp center is the origin."""
        half = 0.5 * opening
        boxes = [
            ((-half - 0.008, -0.01, -0.045), (-half, 0.01, 0.005)),
            ((half, -0.01, -0.045), (half + 0.008, 0.01, 0.005)),
            ((-half - 0.008, -0.012, -0.062), (half + 0.008, 0.012, -0.045)),
            ((-0.015, -0.015, -0.13), (0.015, 0.015, -0.062)),
        ]
        pts = [_box_surface_points(np.array(lo), np.array(hi), spacing) for lo, hi in boxes]
        return cls(np.unique(np.round(np.concatenate(pts), 12), axis=0))

    def posed(self, grasps: GraspSet) -> np.ndarray:
        """Template points for every grasp, ``(N, M, 3)``."""
        return np.einsum("nab,mb->nma", grasps.rotations(), self.points) + grasps.t[:, None]


def _box_surface_points(lo, hi, spacing):
    axes = [np.linspace(lo[k], hi[k], max(2, int(np.ceil((hi[k] - lo[k]) / spacing)) + 1))
            for k in range(3)]
    pts = []
    for k in range(3):
        a, b = [x for x in range(3) if x != k]
        for val in (lo[k], hi[k]):
            ga, gb = np.meshgrid(axes[a], axes[b], indexing="ij")
            p = np.zeros((ga.size, 3))
            p[:, k] = val
            p[:, a] = ga.ravel()
            p[:, b] = gb.ravel()
            pts.append(p)
    return np.concatenate(pts)


# --- quaternions -------------------------------------------------------------

def quat_multiply(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack([w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                     w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                     w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                     w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2], axis=-1)


def quat_from_matrix(R) -> np.ndarray:
    return Rotation.from_matrix(R).as_quat(scalar_first=True)


def quat_angle(qa, qb) -> np.ndarray:
    """arccos(|<qa, qb>|), the quantity the orientation threshold is applied to."""
    dot = np.abs(np.sum(np.asarray(qa) * np.asarray(qb), axis=-1))
    return np.arccos(np.clip(dot, -1.0, 1.0))


# --- matching ----------------------------------------------------------------

def grasp_match(g: Grasp, h: Grasp, cfg: MatchConfig = MatchConfig()) -> bool:
    dt = float(np.linalg.norm(np.asarray(g.t) - np.asarray(h.t)))
    dot = float(np.clip(abs(np.dot(g.q, h.q)), -1.0, 1.0))
    return dt < cfg.sigma_t and float(np.arccos(dot)) < cfg.sigma_q


def match_matrix(a: GraspSet, b: GraspSet, cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """``M[i, j]`` is True when ``a[i]`` and ``b[j]`` match."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), bool)
    dt = np.linalg.norm(a.t[:, None, :] - b.t[None, :, :], axis=2)
    ang = quat_angle(a.q[:, None, :], b.q[None, :, :])
    return (dt < cfg.sigma_t) & (ang < cfg.sigma_q)


def grasp_distance(a: GraspSet, g: Grasp, lam: float = FPS_LAMBDA) -> np.ndarray:
    return np.linalg.norm(a.t - g.t, axis=1) + lam * quat_angle(a.q, g.q)


def fps_sample(grasps: GraspSet, n: int, lam: float = FPS_LAMBDA) -> GraspSet:
    """Greedy farthest point sampling seeded with the first grasp."""
    if not 1 <= n <= len(grasps):
        raise ValueError(f"cannot sample {n} of {len(grasps)} grasps")
    chosen = [0]
    mind = grasp_distance(grasps, grasps[0], lam)
    mind[0] = -np.inf
    for _ in range(n - 1):
        k = int(np.argmax(mind))
        chosen.append(k)
        mind = np.minimum(mind, grasp_distance(grasps, grasps[k], lam))
        mind[chosen] = -np.inf
    return grasps[np.array(chosen)]


def transform_grasps(grasps: GraspSet, pose: RigidPose) -> GraspSet:
    if len(grasps) == 0:
        return GraspSet.empty()
    R = pose.matrix()
    q = quat_multiply(quat_from_matrix(R), grasps.q)
    return GraspSet(grasps.t @ R.T + pose.translation, q / np.linalg.norm(q, axis=1, keepdims=True))


# --- collision tests ---------------------------------------------------------

def hand_clearance(grasps: GraspSet, template: GripperTemplate, hand_cloud) -> np.ndarray:
    """Smallest gripper-point to hand-point distance per grasp (inf without hand points)."""
    cloud = np.asarray(hand_cloud, dtype=np.float64).reshape(-1, 3)
    if len(grasps) == 0:
        return np.zeros(0)
    if len(cloud) == 0:
        return np.full(len(grasps), np.inf)
    pts = template.posed(grasps)
    d, _ = cKDTree(cloud).query(pts.reshape(-1, 3), k=1)
    return d.reshape(len(grasps), -1).min(axis=1)


def hand_collision_filter(grasps: GraspSet, template: GripperTemplate, hand_cloud,
                          eps: float) -> GraspSet:
    """Drop grasps with any gripper/hand point pair closer than ``eps``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    keep = ~(hand_clearance(grasps, template, hand_cloud) < eps)
    return grasps[np.flatnonzero(keep)]


def mesh_collision_mask(grasps: GraspSet, template: GripperTemplate, mesh: TriMesh,
                        tol: float = SURFACE_TOL) -> np.ndarray:
    """True where a posed gripper point is inside ``mesh`` or within ``tol`` of it."""
    mesh.require_closed()
    if len(grasps) == 0:
        return np.zeros(0, bool)
    tree = build_aabb_tree(mesh)
    pts = template.posed(grasps).reshape(-1, 3)
    near = closest_points(tree, mesh, pts).distance <= tol
    hit = near.copy()
    # parity only for points not already caught by the surface tolerance
    far = np.flatnonzero(~near)
    hit[far] = inside_batch(tree, mesh, pts[far])
    return hit.reshape(len(grasps), -1).any(axis=1)


def collision_free(grasps: GraspSet, template: GripperTemplate, meshes) -> np.ndarray:
    free = np.ones(len(grasps), bool)
    for mesh in meshes:
        if mesh is not None:
            free &= ~mesh_collision_mask(grasps, template, mesh)
    return free


def build_reference_set(grasps: GraspSet, gt_object_pose: RigidPose, object_mesh: TriMesh,
                        hand_mesh: Optional[TriMesh],
                        template: Optional[GripperTemplate] = None) -> GraspSet:
    """Object-frame grasps posed by the ground truth, minus those hitting either mesh."""
    template = template or GripperTemplate.parallel_jaw()
    object_mesh.require_closed()
    if hand_mesh is not None:
        hand_mesh.require_closed()
    posed = transform_grasps(grasps, gt_object_pose)
    obj = rigid_forward(gt_object_pose, object_mesh).mesh
    return posed[np.flatnonzero(collision_free(posed, template, [obj, hand_mesh]))]


# --- scores ------------------------------------------------------------------

def coverage(chi: GraspSet, reference: GraspSet, cfg: MatchConfig, gt_object: TriMesh,
             gt_hand: Optional[TriMesh], template: Optional[GripperTemplate] = None,
             chi_free: Optional[np.ndarray] = None) -> float:
    """Fraction of the reference set matched by a collision-free predicted grasp.

    ``chi_free`` may carry a precomputed collision-free mask for ``chi``.
    """
    if len(reference) == 0:
        return 1.0
    if chi_free is None:
        template = template or GripperTemplate.parallel_jaw()
        chi_free = collision_free(chi, template, [gt_object, gt_hand])
    usable = chi[np.flatnonzero(chi_free)]
    return float(match_matrix(reference, usable, cfg).any(axis=1).mean())


def precision(chi: GraspSet, reference: GraspSet, cfg: MatchConfig = MatchConfig()) -> Optional[float]:
    """Fraction of predicted grasps matching some reference grasp; None for empty ``chi``."""
    if len(chi) == 0:
        return None
    return float(match_matrix(chi, reference, cfg).any(axis=1).mean())


def default_eps_grid(steps: int = EPS_STEPS) -> np.ndarray:
    return np.linspace(EPS_RANGE[0], EPS_RANGE[1], steps)


@dataclass
class HandoverScene:
    """One evaluation instance: base grasps in the object frame and GT geometry."""

    grasps: GraspSet               # object frame, typically 100 FPS-sampled grasps
    reference: GraspSet            # successful grasps R in the world frame
    gt_object: TriMesh             # posed
    gt_hand: Optional[TriMesh]     # posed
    cfg: MatchConfig = MatchConfig()

    @classmethod
    def build(cls, grasps, gt_pose: RigidPose, object_rest: TriMesh, gt_hand: Optional[TriMesh],
              template: GripperTemplate, cfg: MatchConfig = MatchConfig()) -> "HandoverScene":
        ref = build_reference_set(grasps, gt_pose, object_rest, gt_hand, template)
        return cls(grasps, ref, rigid_forward(gt_pose, object_rest).mesh, gt_hand, cfg)


class CurvePoint(NamedTuple):
    eps: float
    precision: Optional[float]
    coverage: float


def precision_coverage_curve(scene: HandoverScene, estimated_pose: RigidPose, hand_cloud,
                             template: GripperTemplate, eps_grid=None) -> list[CurvePoint]:
    eps_grid = default_eps_grid() if eps_grid is None else np.asarray(eps_grid, dtype=float)
    if eps_grid.size == 0 or np.any(np.diff(eps_grid) < 0):
        raise ValueError("eps grid must be non-empty and ascending")
    predicted = transform_grasps(scene.grasps, estimated_pose)
    free = collision_free(predicted, template, [scene.gt_object, scene.gt_hand])
    clearance = hand_clearance(predicted, template, hand_cloud)
    out = []
    for eps in eps_grid:
        if eps < 0:
            raise ValueError("eps must be non-negative")
        keep = np.flatnonzero(~(clearance < eps))
        chi = predicted[keep]
        out.append(CurvePoint(float(eps), precision(chi, scene.reference, scene.cfg),
                              coverage(chi, scene.reference, scene.cfg, scene.gt_object,
                                       scene.gt_hand, chi_free=free[keep])))
    return out


def curve_to_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "precision", "coverage"])
    for p in points:
        w.writerow([repr(p.eps), "" if p.precision is None else repr(p.precision), repr(p.coverage)])
    return buf.getvalue()


# --- synthetic grasp sets ----------------------------------------------------

def candidate_grasps(mesh: TriMesh, rng: np.random.Generator, n: int = 600,
                     template: Optional[GripperTemplate] = None,
                     opening: float = 0.085) -> GraspSet:
    """Antipodal-style grasps around a closed object-frame mesh.

    The closing axis runs through the object center along a random direction
    whose object width fits the opening; the approach is perpendicular to it
    and the grasp center is pushed back until the gripper clears the mesh.
    """
    template = template or GripperTemplate.parallel_jaw(opening)
    verts = mesh.vertices
    center = 0.5 * (verts.min(axis=0) + verts.max(axis=0))
    ts, qs = [], []
    tries = 0
    while len(ts) < n and tries < 50 * n:
        tries += 1
        x = rng.normal(size=3)
        x /= np.linalg.norm(x)
        width = np.ptp(verts @ x)
        if width > opening - 0.01:
            continue
        z = np.cross(x, rng.normal(size=3))
        z /= np.linalg.norm(z)
        y = np.cross(z, x)
        R = np.column_stack([x, y, z])
        # slide the object-facing grasp center toward the gripper until clear
        offset = rng.uniform(-0.3, 0.3) * np.ptp(verts @ y) * y
        depth_face = (verts - center) @ z
        back = rng.uniform(0.0, 0.02)
        t = center + offset - z * (back - min(0.0, 0.04 + depth_face.min()))
        ts.append(t)
        qs.append(quat_from_matrix(R))
    cand = GraspSet(np.array(ts), np.array(qs))
    free = ~mesh_collision_mask(cand, template, mesh)
    return cand[np.flatnonzero(free)]
