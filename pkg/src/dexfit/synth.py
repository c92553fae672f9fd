"""Synthetic multi-view scenes with exact ground truth.

A scene spec describes a camera ring, primitive objects with constant-velocity
rigid trajectories and skinned hands with a curl pose; generation renders depth
and label maps by ray casting, projects keypoints with occlusion-aware
visibility and anchors object keypoints on the first frame they are seen.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import primitives
from .camera import (CameraView, DepthMap, KeypointOffObject, anchor_keypoint, load_cameras,
                     look_at, merge_point_clouds, pixel_grid, pixel_rays, project_points,
                     save_cameras)
from .energy import AnnotationSet, FrameObservation, N_OBJECT_KEYPOINTS, SceneModels, ScenePose
from .geometry import TriMesh, build_aabb_tree, load_mesh, merge_meshes, ray_cast_batch, save_mesh
from .grasp_eval import GraspSet, candidate_grasps, fps_sample
from .models import (ARTICULATED, N_JOINTS, HandModel, HandPose, RigidPose, rigid_forward,
                     rotation_matrix, axis_angle_from_matrix)

OCCLUSION_TOL = 1e-4
BACKGROUND = -1

DEFAULT_SPEC = {
    "seed": 0,
    "frames": 1,
    "views": 8,
    "width": 160,
    "height": 120,
    "focal": 280.0,
    "rig_radius": 0.7,
    "rig_heights": [0.25, 0.45],
    "depth_noise_mm": 0.0,
    "keypoint_noise_px": 0.0,
    "grasps_per_object": 100,
    "objects": [
        {"shape": "box", "params": {"size": [0.05, 0.07, 0.10], "subdiv": 3},
         "rotation": [0.0, 0.0, 0.3], "translation": [0.02, 0.0, 0.0],
         "velocity": [0.0, 0.0, 0.0], "angular_velocity": [0.0, 0.0, 0.0]},
    ],
    "hands": [
        {"side": "right", "rotation": None, "translation": [-0.075, -0.01, -0.07],
         "curl": 0.35, "spread": 0.05, "velocity": [0.0, 0.0, 0.0]},
    ],
}


def _merged_spec(spec: Optional[dict]) -> dict:
    out = copy.deepcopy(DEFAULT_SPEC)
    out.update(copy.deepcopy(spec or {}))
    if out["frames"] < 1 or out["views"] < 1:
        raise ValueError("a scene needs at least one frame and one view")
    return out


def _hand_facing_x() -> np.ndarray:
    """Root rotation putting the fingers along +z with the palm facing +x."""
    rz = rotation_matrix([0.0, 0.0, -np.pi / 2])
    rx = rotation_matrix([np.pi / 2, 0.0, 0.0])
    return axis_angle_from_matrix(rz @ rx)


# --- rig and models ----------------------------------------------------------

def default_rig(n_views: int = 8, radius: float = 0.7, heights=(0.25, 0.45),
                width: int = 160, height: int = 120, focal: float = 280.0,
                target=(0.0, 0.0, 0.0)) -> list[CameraView]:
    """Cameras on a ring around ``target``, alternating between two heights."""
    views = []
    for c in range(n_views):
        a = 2 * np.pi * c / n_views
        eye = np.array([radius * np.cos(a), radius * np.sin(a), heights[c % len(heights)]])
        R, t = look_at(eye + np.asarray(target), target)
        views.append(CameraView(focal, focal, 0.5 * (width - 1), 0.5 * (height - 1),
                                width, height, R, t))
    return views


def make_object(entry: dict) -> TriMesh:
    shape = entry["shape"]
    params = dict(entry.get("params", {}))
    if shape == "box":
        return primitives.box(**params)
    if shape == "cylinder":
        return primitives.cylinder(**params)
    if shape == "l_bracket":
        return primitives.l_bracket(**params)
    raise ValueError(f"unknown object shape {shape!r}")


def _hand_theta(entry: dict, model: HandModel, frame: int, rng: np.random.Generator) -> np.ndarray:
    theta = np.zeros(model.dim)
    rot = entry.get("rotation")
    theta[0:3] = _hand_facing_x() if rot is None else rot
    theta[3:6] = np.asarray(entry["translation"], float) + frame * np.asarray(
        entry.get("velocity", [0.0, 0.0, 0.0]), float)
    curl = float(entry.get("curl", 0.0))
    for n, j in enumerate(ARTICULATED):
        base = 6 + 3 * n
        if j <= 4:
            theta[base:base + 3] = [0.0, 0.0, 0.3 * curl]
        else:
            theta[base:base + 3] = [-curl, 0.0, 0.0]
    spread = float(entry.get("spread", 0.0))
    if spread > 0:
        theta[6:] += rng.normal(0.0, spread, size=theta.size - 6)
    return theta


@dataclass
class SceneSpec:
    """Parsed scene description; ``raw`` is the full dict as written to disk."""

    raw: dict

    @classmethod
    def from_dict(cls, d: Optional[dict] = None) -> "SceneSpec":
        return cls(_merged_spec(d))

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __getitem__(self, key):
        return self.raw[key]


@dataclass
class SyntheticScene:
    spec: SceneSpec
    models: SceneModels
    gt: list                          # ScenePose per frame
    depths: list                      # per frame, per view DepthMap
    labels: list                      # per frame, per view (H, W) int mesh owner
    annotations: list                 # AnnotationSet per frame (anchors attached)
    keypoints: list                   # per object (K, 3) object-frame GT keypoints
    grasps: list = field(default_factory=list)   # GraspSet per object, object frame

    @property
    def n_frames(self) -> int:
        return len(self.gt)

    def observation(self, t: int) -> FrameObservation:
        """Merged cloud and a private copy of the frame's annotations."""
        return FrameObservation(merge_point_clouds(self.models.views, self.depths[t]),
                                copy.deepcopy(self.annotations[t]))

    def observations(self) -> list[FrameObservation]:
        return [self.observation(t) for t in range(self.n_frames)]

    def hand_cloud(self, t: int, h: Optional[int] = None) -> np.ndarray:
        """World points of the pixels labelled as hand ``h`` (any hand if None)."""
        n_h = len(self.models.hands)
        pts = []
        for view, dm, lab in zip(self.models.views, self.depths[t], self.labels[t]):
            keep = (lab >= 0) & (lab < n_h) if h is None else (lab == h)
            keep &= dm.valid
            if not keep.any():
                continue
            only = DepthMap(np.where(keep, dm.depth, 0.0))
            pts.append(merge_point_clouds([view], [only]))
        return np.concatenate(pts) if pts else np.empty((0, 3))


# --- rendering and annotation ------------------------------------------------

def posed_meshes(P: ScenePose, models: SceneModels) -> list[TriMesh]:
    meshes = [m.forward(p).mesh for m, p in zip(models.hands, P.hands)]
    meshes += [rigid_forward(p, rest).mesh for p, rest in zip(P.objects, models.objects)]
    return meshes


def _merged(meshes):
    if not meshes:
        return None, None, None
    merged = merge_meshes(meshes)
    owner = np.concatenate([np.full(m.n_faces, i) for i, m in enumerate(meshes)])
    return merged, build_aabb_tree(merged), owner


def render(meshes, view: CameraView, noise_mm: float = 0.0,
           rng: Optional[np.random.Generator] = None) -> tuple[DepthMap, np.ndarray]:
    """Depth map plus a per-pixel owner label (mesh index, -1 for a miss)."""
    merged, tree, owner = _merged(list(meshes))
    labels = np.full((view.height, view.width), BACKGROUND, dtype=np.int64)
    if merged is None:
        return DepthMap.invalid(view.width, view.height), labels
    o, d = pixel_rays(view, pixel_grid(view.width, view.height))
    face, t, _ = ray_cast_batch(tree, merged, o, d)
    hit = face >= 0
    z = np.zeros(len(face))
    # ray length to camera-frame depth: z component of the camera-frame direction
    z[hit] = t[hit] * (d[hit] @ view.rotation[2])
    if noise_mm > 0 and rng is not None:
        z[hit] += rng.normal(0.0, noise_mm * 1e-3, size=int(hit.sum()))
    labels.reshape(-1)[hit] = owner[face[hit]]
    # stored maps are float32; quantise here so in-memory and reloaded scenes agree
    z = z.astype(np.float32).astype(np.float64)
    return DepthMap(z.reshape(view.height, view.width)), labels


def render_depth(meshes, view: CameraView, noise_mm: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> DepthMap:
    return render(meshes, view, noise_mm, rng)[0]


def visibility(points, tolerances, meshes, view: CameraView) -> np.ndarray:
    """True where a point projects inside the image and nothing blocks the line of sight.

    A point is blocked when the camera ray toward it hits a surface more than
    its tolerance before reaching it.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tol = np.broadcast_to(np.asarray(tolerances, dtype=np.float64), (len(pts),))
    if len(pts) == 0:
        return np.zeros(0, bool)
    z = view.to_camera(pts)[:, 2]
    vis = z > 1e-6
    if np.any(vis):
        uv = project_points(view, pts[vis])
        inside = ((uv[:, 0] >= -0.5) & (uv[:, 0] < view.width - 0.5)
                  & (uv[:, 1] >= -0.5) & (uv[:, 1] < view.height - 0.5))
        vis[np.flatnonzero(vis)[~inside]] = False
    merged, tree, _ = _merged(list(meshes))
    if merged is None or not np.any(vis):
        return vis
    idx = np.flatnonzero(vis)
    center = view.center
    seg = pts[idx] - center
    dist = np.linalg.norm(seg, axis=1)
    face, t, _ = ray_cast_batch(tree, merged, np.tile(center, (len(idx), 1)), seg / dist[:, None])
    blocked = (face >= 0) & (t < dist - tol[idx])
    vis[idx[blocked]] = False
    return vis


def annotate(P: ScenePose, models: SceneModels, object_keypoints, noise_px: float = 0.0,
             rng: Optional[np.random.Generator] = None, meshes=None) -> AnnotationSet:
    """Projected keypoints with occlusion visibility for every view.

    Hand joints sit inside their own finger tubes, so a joint's tolerance is
    its tube radius plus ``OCCLUSION_TOL``; object keypoints lie on the
    surface and use ``OCCLUSION_TOL`` alone. Anchors are left empty.
    """
    meshes = posed_meshes(P, models) if meshes is None else meshes
    n_c, n_h, n_o = len(models.views), len(P.hands), len(P.objects)
    n_k = max([len(k) for k in object_keypoints], default=N_OBJECT_KEYPOINTS)
    ann = AnnotationSet.empty(n_c, n_h, n_o, n_k)
    joints = [m.forward(p).joints for m, p in zip(models.hands, P.hands)]
    obj_pts = [P.objects[o].apply(object_keypoints[o]) for o in range(n_o)]
    for c, view in enumerate(models.views):
        for h in range(n_h):
            tol = models.hands[h].joint_depth + OCCLUSION_TOL
            ann.hand_vis[c, h] = visibility(joints[h], tol, meshes, view)
            ann.hand_uv[c, h] = _noisy_projection(view, joints[h], ann.hand_vis[c, h], noise_px, rng)
        for o in range(n_o):
            ann.obj_vis[c, o] = visibility(obj_pts[o], OCCLUSION_TOL, meshes, view)
            ann.obj_uv[c, o] = _noisy_projection(view, obj_pts[o], ann.obj_vis[c, o], noise_px, rng)
    return ann


def _noisy_projection(view, pts, vis, noise_px, rng):
    uv = np.zeros((len(pts), 2))
    if np.any(vis):
        uv[vis] = project_points(view, pts[vis])
    if noise_px > 0 and rng is not None:
        # draw for every keypoint so the stream does not depend on visibility
        eps = rng.normal(0.0, noise_px, size=uv.shape)
        uv[vis] += eps[vis]
    return uv


def fix_anchors(annotations: list, gt: list, models: SceneModels) -> list:
    """Anchor each object keypoint on the first (frame, view) where it is visible.

    The annotated pixel is cast onto the object posed at that frame; if the
    ray misses (possible with pixel noise) the next visible view is tried.
    """
    n_o = len(models.objects)
    n_k = annotations[0].obj_vis.shape[2] if annotations else 0
    anchors = [[None] * n_k for _ in range(n_o)]
    for o, rest in enumerate(models.objects):
        for k in range(n_k):
            for t, ann in enumerate(annotations):
                if anchors[o][k] is not None:
                    break
                for c in np.flatnonzero(ann.obj_vis[:, o, k]):
                    mesh = rigid_forward(gt[t].objects[o], rest).mesh
                    try:
                        anchors[o][k] = anchor_keypoint(models.views[c], ann.obj_uv[c, o, k][None],
                                                        mesh, build_aabb_tree(mesh))
                        break
                    except KeypointOffObject:
                        continue
    return anchors


def choose_object_keypoints(rest: TriMesh, pose: RigidPose, views, meshes,
                            rng: np.random.Generator, n: int = N_OBJECT_KEYPOINTS,
                            candidates: int = 64) -> np.ndarray:
    """Face-interior object-frame points, visible in some view at ``pose``, spread apart."""
    areas = rest.face_areas()
    faces = rng.choice(rest.n_faces, size=candidates, p=areas / areas.sum())
    bary = rng.dirichlet([4.0, 4.0, 4.0], size=candidates)
    local = np.einsum("nk,nka->na", bary, rest.vertices[rest.faces[faces]])
    world = pose.apply(local)
    seen = np.zeros(candidates, bool)
    for view in views:
        seen |= visibility(world, OCCLUSION_TOL, meshes, view)
    pool = np.flatnonzero(seen)
    if len(pool) < n:
        pool = np.arange(candidates)
    chosen = [pool[0]]
    while len(chosen) < n:
        d = np.min(np.linalg.norm(local[pool, None] - local[chosen][None], axis=2), axis=1)
        chosen.append(pool[int(np.argmax(d))])
    return local[chosen]


# --- perturbation ------------------------------------------------------------

@dataclass(frozen=True)
class Perturbation:
    """Gaussian standard deviations for each parameter group."""

    translation_mm: float = 0.0     # object translations
    rotation_deg: float = 0.0       # object rotations, per axis of a left-applied rotation
    theta: float = 0.0              # hand embedding angles (radians); root translation excluded
    hand_translation_mm: float = 0.0  # hand root translation, theta[3:6] (identity basis)

    def __post_init__(self):
        if min(self.translation_mm, self.rotation_deg, self.theta, self.hand_translation_mm) < 0:
            raise ValueError("perturbation magnitudes must be non-negative")


def perturb(pose: ScenePose, magnitudes: Perturbation, rng: np.random.Generator) -> ScenePose:
    out = pose.copy()
    for o, obj in enumerate(out.objects):
        dt = rng.normal(0.0, magnitudes.translation_mm * 1e-3, size=3)
        dw = rng.normal(0.0, np.deg2rad(magnitudes.rotation_deg), size=3)
        R = rotation_matrix(dw) @ obj.matrix()
        out.objects[o] = RigidPose(axis_angle_from_matrix(R) if np.any(dw) else obj.rotation,
                                   obj.translation + dt)
    for h, hand in enumerate(out.hands):
        noise = rng.normal(0.0, magnitudes.theta, size=hand.theta.size)
        noise[3:6] = 0.0   # meters, not radians: governed by hand_translation_mm
        theta = hand.theta + noise
        theta[3:6] += rng.normal(0.0, magnitudes.hand_translation_mm * 1e-3, size=3)
        out.hands[h] = HandPose(theta)
    return out


# --- generation --------------------------------------------------------------

def _streams(seed: int, n_frames: int, n_views: int):
    """Independent generators: setup, grasps, and one (depth, keypoint) pair per frame/view."""
    root = np.random.SeedSequence(seed)
    setup, grasps, frames = root.spawn(3)
    per = [[(np.random.default_rng(a), np.random.default_rng(b))
            for a, b in (s.spawn(2) for s in f.spawn(n_views))] for f in frames.spawn(n_frames)]
    return np.random.default_rng(setup), np.random.default_rng(grasps), per


def gt_trajectory(spec: SceneSpec, models: SceneModels, rng: np.random.Generator) -> list:
    objs = spec["objects"]
    hands = spec["hands"]
    hand_base = [_hand_theta(h, models.hands[i], 0, rng) for i, h in enumerate(hands)]
    out = []
    for t in range(spec["frames"]):
        P = ScenePose()
        for entry, base in zip(hands, hand_base):
            theta = base.copy()
            theta[3:6] = base[3:6] + t * np.asarray(entry.get("velocity", [0, 0, 0]), float)
            P.hands.append(HandPose(theta))
        for entry in objs:
            R0 = rotation_matrix(entry.get("rotation", [0, 0, 0]))
            dR = rotation_matrix(t * np.asarray(entry.get("angular_velocity", [0, 0, 0]), float))
            tr = np.asarray(entry["translation"], float) + t * np.asarray(
                entry.get("velocity", [0, 0, 0]), float)
            P.objects.append(RigidPose(axis_angle_from_matrix(dR @ R0), tr))
        out.append(P)
    return out


def generate_scene(spec=None, with_grasps: bool = True) -> SyntheticScene:
    spec = spec if isinstance(spec, SceneSpec) else SceneSpec.from_dict(spec)
    n_t, n_c = spec["frames"], spec["views"]
    setup_rng, grasp_rng, streams = _streams(int(spec["seed"]), n_t, n_c)
    views = default_rig(n_c, spec["rig_radius"], spec["rig_heights"], spec["width"],
                        spec["height"], spec["focal"])
    hands = [HandModel.procedural(side=h.get("side", "right")) for h in spec["hands"]]
    objects = [make_object(o) for o in spec["objects"]]
    models = SceneModels(hands, objects, views)
    gt = gt_trajectory(spec, models, setup_rng)

    meshes0 = posed_meshes(gt[0], models)
    keypoints = [choose_object_keypoints(rest, gt[0].objects[o], views, meshes0, setup_rng)
                 for o, rest in enumerate(objects)]

    depths, labels, anns = [], [], []
    for t in range(n_t):
        meshes = meshes0 if t == 0 else posed_meshes(gt[t], models)
        d_t, l_t = [], []
        for c, view in enumerate(views):
            dm, lab = render(meshes, view, spec["depth_noise_mm"], streams[t][c][0])
            d_t.append(dm)
            l_t.append(lab)
        depths.append(d_t)
        labels.append(l_t)
        ann = AnnotationSet.empty(n_c, len(hands), len(objects), N_OBJECT_KEYPOINTS)
        for c in range(n_c):
            one = SceneModels(hands, objects, [views[c]])
            a = annotate(gt[t], one, keypoints, spec["keypoint_noise_px"], streams[t][c][1], meshes)
            ann.hand_uv[c], ann.hand_vis[c] = a.hand_uv[0], a.hand_vis[0]
            ann.obj_uv[c], ann.obj_vis[c] = a.obj_uv[0], a.obj_vis[0]
        anns.append(ann)
    anchors = fix_anchors(anns, gt, models)
    anns = [a.with_anchors(anchors) for a in anns]

    grasps = []
    if with_grasps:
        for rest in objects:
            cand = candidate_grasps(rest, grasp_rng)
            n = min(int(spec["grasps_per_object"]), len(cand))
            grasps.append(fps_sample(cand, n) if n > 0 else GraspSet.empty())
    return SyntheticScene(spec, models, gt, depths, labels, anns, keypoints, grasps)


# --- scene directories -------------------------------------------------------

def _frame_name(t: int, c: int) -> str:
    return f"frame_{t:04d}_view_{c}"


def save_scene(scene: SyntheticScene, out_dir) -> list[Path]:
    """Write every artifact of ``scene`` under ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(exist_ok=True)
    (out / "grasps").mkdir(exist_ok=True)
    written = []

    def put(rel, writer):
        p = out / rel
        writer(p)
        written.append(p)

    for o, mesh in enumerate(scene.models.objects):
        put(f"object_{o}.mesh", lambda p, m=mesh: save_mesh(m, p))
    for h, hand in enumerate(scene.models.hands):
        hand.save(out / f"hand_{h}.mesh", out / f"hand_{h}.json")
        written += [out / f"hand_{h}.mesh", out / f"hand_{h}.json"]
    put("cameras.json", lambda p: save_cameras(scene.models.views, p))
    for t in range(scene.n_frames):
        for c in range(len(scene.models.views)):
            put(f"depth/{_frame_name(t, c)}.bin", lambda p, t=t, c=c: scene.depths[t][c].save(p))
            put(f"labels/{_frame_name(t, c)}.npy",
                lambda p, t=t, c=c: np.save(p, scene.labels[t][c].astype(np.int8)))
    put("annotations.json", lambda p: p.write_text(json.dumps(
        [a.to_json() for a in scene.annotations])))
    for o, g in enumerate(scene.grasps):
        put(f"grasps/object_{o}.json", lambda p, g=g: g.save(p))
    meta = {
        "spec": scene.spec.raw,
        "frames": scene.n_frames,
        "views": len(scene.models.views),
        "objects": len(scene.models.objects),
        "hands": len(scene.models.hands),
        "object_keypoints": [k.tolist() for k in scene.keypoints],
        "gt": [P.to_json() for P in scene.gt],
    }
    put("scene.json", lambda p: p.write_text(json.dumps(meta, indent=1)))
    return written


def load_scene(scene_dir) -> SyntheticScene:
    d = Path(scene_dir)
    meta = json.loads((d / "scene.json").read_text())
    views = load_cameras(d / "cameras.json")
    objects = [load_mesh(d / f"object_{o}.mesh") for o in range(meta["objects"])]
    hands = [HandModel.load(d / f"hand_{h}.mesh", d / f"hand_{h}.json") for h in range(meta["hands"])]
    models = SceneModels(hands, objects, views)
    n_t, n_c = meta["frames"], meta["views"]
    depths = [[DepthMap.load(d / "depth" / f"{_frame_name(t, c)}.bin") for c in range(n_c)]
              for t in range(n_t)]
    labels = [[np.load(d / "labels" / f"{_frame_name(t, c)}.npy").astype(np.int64)
               for c in range(n_c)] for t in range(n_t)]
    anns = [AnnotationSet.from_json(a) for a in json.loads((d / "annotations.json").read_text())]
    grasps = []
    for o in range(meta["objects"]):
        p = d / "grasps" / f"object_{o}.json"
        grasps.append(GraspSet.load(p) if p.exists() else GraspSet.empty())
    return SyntheticScene(SceneSpec(meta["spec"]), models, [ScenePose.from_json(g) for g in meta["gt"]],
                          depths, labels, anns, [np.array(k) for k in meta["object_keypoints"]],
                          grasps)
