"""Pinhole views, depth maps, cloud merging and keypoint anchoring."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .geometry import AabbTree, TriMesh, ray_cast_batch

MIN_DEPTH = 1e-6


class CameraError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CameraView:
    """Intrinsics in pixels plus a world->camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError("focal lengths must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise CameraError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)

    def to_camera(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "rotation": self.rotation.reshape(-1).tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]),
                   np.array(d["rotation"], dtype=float).reshape(3, 3),
                   np.array(d["translation"], dtype=float))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World->camera (R, t) for a camera at ``eye`` looking at ``target`` (+z forward, +y down)."""
    eye = np.asarray(eye, float)
    z = np.asarray(target, float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ eye


def project_points(view: CameraView, X) -> np.ndarray:
    """Project ``(N, 3)`` world points to ``(N, 2)`` pixels."""
    Xc = view.to_camera(np.asarray(X, dtype=np.float64).reshape(-1, 3))
    z = Xc[:, 2]
    if np.any(~(z > MIN_DEPTH)):
        raise CameraError("behind camera")
    return np.column_stack([view.fx * Xc[:, 0] / z + view.cx, view.fy * Xc[:, 1] / z + view.cy])


def project(view: CameraView, X) -> np.ndarray:
    return project_points(view, X)[0]


def project_with_jacobian(view: CameraView, X) -> tuple[np.ndarray, np.ndarray]:
    """Pixels ``(N, 2)`` and d(pixel)/d(world point) ``(N, 2, 3)``."""
    Xc = view.to_camera(np.asarray(X, dtype=np.float64).reshape(-1, 3))
    x, y, z = Xc.T
    if np.any(~(z > MIN_DEPTH)):
        raise CameraError("behind camera")
    uv = np.column_stack([view.fx * x / z + view.cx, view.fy * y / z + view.cy])
    dc = np.zeros((len(Xc), 2, 3))
    dc[:, 0, 0] = view.fx / z
    dc[:, 0, 2] = -view.fx * x / z**2
    dc[:, 1, 1] = view.fy / z
    dc[:, 1, 2] = -view.fy * y / z**2
    return uv, dc @ view.rotation


def backproject_points(view: CameraView, pixels, depth) -> np.ndarray:
    """Pixels ``(N, 2)`` with camera-frame depths ``(N,)`` to world points."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    z = np.broadcast_to(np.asarray(depth, dtype=np.float64), (len(px),))
    if np.any(~(z > 0)):
        raise CameraError("depth must be positive")
    Xc = np.column_stack([(px[:, 0] - view.cx) / view.fx * z,
                          (px[:, 1] - view.cy) / view.fy * z, z])
    return (Xc - view.translation) @ view.rotation


def backproject(view: CameraView, pixel, depth: float) -> np.ndarray:
    return backproject_points(view, pixel, depth)[0]


def pixel_rays(view: CameraView, pixels) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origins and unit directions through ``(N, 2)`` pixels."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d = np.column_stack([(px[:, 0] - view.cx) / view.fx, (px[:, 1] - view.cy) / view.fy,
                         np.ones(len(px))])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    dirs = d @ view.rotation
    return np.broadcast_to(view.center, dirs.shape).copy(), dirs


def pixel_grid(width: int, height: int) -> np.ndarray:
    """Row-major ``(H*W, 2)`` pixel centers as (u, v) = (column, row)."""
    v, u = np.mgrid[0:height, 0:width]
    return np.column_stack([u.ravel(), v.ravel()]).astype(np.float64)


# --- depth maps and clouds ---------------------------------------------------

class DepthMap:
    """Per-pixel camera-frame depth in meters; 0 marks a missing return."""

    INVALID = 0.0
    _MAGIC = b"DXDEPTH1"

    def __init__(self, depth):
        d = np.asarray(depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth map must be 2-D (height, width)")
        d = np.where(np.isfinite(d) & (d > 0), d, self.INVALID)
        self.depth = d

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    @classmethod
    def invalid(cls, width: int, height: int) -> "DepthMap":
        return cls(np.zeros((height, width)))

    def save(self, path) -> None:
        header = self._MAGIC + struct.pack("<II", self.width, self.height)
        Path(path).write_bytes(header + self.depth.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "DepthMap":
        raw = Path(path).read_bytes()
        if raw[:8] != cls._MAGIC:
            raise ValueError(f"{path}: not a depth map")
        w, h = struct.unpack("<II", raw[8:16])
        data = np.frombuffer(raw[16:], dtype="<f4")
        if data.size != w * h:
            raise ValueError(f"{path}: truncated depth map")
        return cls(data.reshape(h, w).astype(np.float64))


def depth_to_points(view: CameraView, depth: DepthMap) -> np.ndarray:
    mask = depth.valid.ravel()
    px = pixel_grid(depth.width, depth.height)[mask]
    if len(px) == 0:
        return np.empty((0, 3))
    return backproject_points(view, px, depth.depth.ravel()[mask])


def merge_point_clouds(views, depths) -> np.ndarray:
    """World cloud from every valid pixel, view-major then row-major."""
    if len(views) != len(depths):
        raise CameraError("one depth map per view is required")
    chunks = []
    for view, dm in zip(views, depths):
        if (dm.width, dm.height) != (view.width, view.height):
            raise CameraError("depth map resolution does not match the view")
        chunks.append(depth_to_points(view, dm))
    if not chunks:
        return np.empty((0, 3))
    return np.concatenate(chunks)


# --- keypoint anchors --------------------------------------------------------

class SurfaceAnchor(NamedTuple):
    """A point fixed on a model surface: face id plus barycentric weights."""

    face: int
    bary: tuple

    def point(self, mesh: TriMesh) -> np.ndarray:
        return mesh.point_at(self.face, self.bary)


class KeypointOffObject(CameraError):
    pass


def anchor_keypoint(view: CameraView, pixel, mesh: TriMesh, tree: AabbTree) -> SurfaceAnchor:
    """Back-project a pixel onto the nearest visible surface of a posed mesh.

    The anchor is stored as face + barycentric weights, which are the same on
    the rest mesh because posing never changes topology.
    """
    o, d = pixel_rays(view, pixel)
    face, _, bary = ray_cast_batch(tree, mesh, o, d)
    if face[0] < 0:
        raise KeypointOffObject("keypoint off object")
    return SurfaceAnchor(int(face[0]), tuple(float(x) for x in bary[0]))


def save_cameras(views, path) -> None:
    Path(path).write_text(json.dumps([v.to_dict() for v in views], indent=1))


def load_cameras(path) -> list[CameraView]:
    return [CameraView.from_dict(d) for d in json.loads(Path(path).read_text())]
