"""Hand pose metrics: MPJPE variants, PCK AUC and annotation reprojection error."""
from __future__ import annotations

import csv
import io
from typing import NamedTuple, Optional

import numpy as np

from .camera import project_points
from .models import N_JOINTS

MODES = ("absolute", "root_relative", "procrustes")
PCK_RANGE = (0.0, 50.0)   # mm
PCK_STEPS = 100


class SimilarityTransform(NamedTuple):
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, X) -> np.ndarray:
        return self.scale * np.asarray(X) @ self.rotation.T + self.translation


def _joints(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (N_JOINTS, 3):
        raise ValueError(f"expected a ({N_JOINTS}, 3) joint set, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("joint set has non-finite coordinates")
    return X


def similarity_fit(src, dst) -> SimilarityTransform:
    """Least-squares ``s R src + t ~ dst`` via SVD of the cross-covariance, reflection-corrected."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - mu_s, dst - mu_d
    var_s = np.sum(a * a) / len(src)
    if var_s == 0.0:
        return SimilarityTransform(1.0, np.eye(3), mu_d - mu_s)
    U, S, Vt = np.linalg.svd(b.T @ a / len(src))
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2] = -1.0
    R = (U * D) @ Vt
    s = float(np.sum(S * D) / var_s)
    return SimilarityTransform(s, R, mu_d - s * R @ mu_s)


def joint_errors(pred, gt, mode: str = "absolute") -> np.ndarray:
    """Per-joint Euclidean errors after the alignment named by ``mode``."""
    pred, gt = _joints(pred), _joints(gt)
    if mode == "absolute":
        aligned = pred
    elif mode == "root_relative":
        aligned = pred - pred[0] + gt[0]
    elif mode == "procrustes":
        aligned = similarity_fit(pred, gt).apply(pred)
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return np.linalg.norm(aligned - gt, axis=1)


def mpjpe(pred, gt, mode: str = "absolute") -> float:
    """Mean per-joint position error in the units of the inputs (mm by convention)."""
    return float(joint_errors(pred, gt, mode).mean())


def pck_thresholds(range_mm=PCK_RANGE, steps: int = PCK_STEPS) -> np.ndarray:
    lo, hi = range_mm
    return lo + (hi - lo) * np.arange(1, steps + 1) / steps


def pck_auc(errors, range_mm=PCK_RANGE, steps: int = PCK_STEPS) -> float:
    """Mean over the thresholds of the fraction of errors strictly below each."""
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("pck_auc needs at least one error")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and non-negative")
    tau = pck_thresholds(range_mm, steps)
    return float(np.mean(e[None, :] < tau[:, None]))


class JointReprojection(NamedTuple):
    mean: Optional[float]
    std: Optional[float]
    count: int


def reprojection_error(joints3d, annotations, views, hand: int = 0) -> list[JointReprojection]:
    """Per joint mean and std of pixel distance over the views where it is visible.

    ``joints3d`` are world coordinates in meters, matching the views' extrinsics.
    A joint visible in no view gets ``mean = std = None``.
    """
    X = _joints(joints3d)
    dists = [[] for _ in range(N_JOINTS)]
    for c, view in enumerate(views):
        vis = annotations.hand_vis[c, hand]
        idx = np.flatnonzero(vis)
        if len(idx) == 0:
            continue
        uv = project_points(view, X[idx])
        d = np.linalg.norm(uv - annotations.hand_uv[c, hand, idx], axis=1)
        for j, dj in zip(idx, d):
            dists[j].append(dj)
    out = []
    for d in dists:
        if d:
            arr = np.array(d)
            out.append(JointReprojection(float(arr.mean()), float(arr.std()), len(d)))
        else:
            out.append(JointReprojection(None, None, 0))
    return out


def report_csv(rows) -> str:
    """CSV with header ``sample,mode,value`` from ``(sample id, mode, value)`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "mode", "value"])
    for sample, mode, value in rows:
        w.writerow([sample, mode, repr(float(value))])
    return buf.getvalue()
