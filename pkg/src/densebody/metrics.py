"""Evaluation metrics: per-vertex and per-joint errors, Procrustes alignment, keypoint AP.

Inputs are in meters; the distance metrics report millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bodymodel import BodyModel, skin
from .errors import NumericalError, ShapeError

MM = 1000.0

# standard per-keypoint falloff constants for the 17 COCO keypoints
COCO_SIGMAS = np.array([
    0.26, 0.25, 0.25, 0.35, 0.35, 0.79, 0.79, 0.72, 0.72,
    0.62, 0.62, 1.07, 1.07, 0.87, 0.87, 0.89, 0.89,
]) / 10.0
COCO_KAPPA = 2.0 * COCO_SIGMAS

OKS_THRESHOLDS = np.linspace(0.5, 0.95, 10)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def _points(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ShapeError(f"expected matching M x 3 point sets, got {a.shape} and {b.shape}")
    return a, b


def procrustes_align(pred, gt) -> SimilarityTransform:
    """Least-squares similarity mapping ``pred`` onto ``gt`` with a proper rotation."""
    pred, gt = _points(pred, gt)
    if pred.shape[0] < 3:
        raise NumericalError("Procrustes alignment needs at least 3 points")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    X, Y = pred - mu_p, gt - mu_g
    var_p = np.sum(X**2) / len(X)
    cov = Y.T @ X / len(X)
    U, S, Vt = np.linalg.svd(cov)
    if var_p <= 1e-300 or S[1] <= 1e-12 * max(S[0], 1e-300):
        raise NumericalError("degenerate point configuration for Procrustes alignment")
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(U) * np.linalg.det(Vt)) or 1.0
    R = (U * d) @ Vt
    s = float(np.sum(S * d) / var_p)
    return SimilarityTransform(s, R, mu_g - s * R @ mu_p)


def pve(pred_vertices, gt_vertices) -> float:
    """Mean per-vertex Euclidean distance in mm."""
    pred, gt = _points(pred_vertices, gt_vertices)
    return float(np.mean(np.linalg.norm((pred - gt) * MM, axis=1)))


def pve_s(model: BodyModel, pred_params, gt_params) -> float:
    """PVE with both poses zeroed; params are ``(theta, beta)`` pairs."""
    zero = np.zeros((model.num_joints, 3))
    (_, beta_pred), (_, beta_gt) = pred_params, gt_params
    return pve(skin(model, zero, beta_pred), skin(model, zero, beta_gt))


def pve_p(model: BodyModel, pred_params, gt_params) -> float:
    """PVE with both shapes zeroed; params are ``(theta, beta)`` pairs."""
    zero = np.zeros(model.num_betas)
    (theta_pred, _), (theta_gt, _) = pred_params, gt_params
    return pve(skin(model, theta_pred, zero), skin(model, theta_gt, zero))


def mpjpe(pred_joints, gt_joints, root_index: int = 0) -> float:
    """Mean per-joint distance in mm after subtracting each set's root joint."""
    pred, gt = _points(pred_joints, gt_joints)
    if not 0 <= root_index < len(pred):
        raise IndexError(f"root index {root_index} out of range")
    return pve(pred - pred[root_index], gt - gt[root_index])


def mpjpe_pa(pred_joints, gt_joints) -> float:
    pred, gt = _points(pred_joints, gt_joints)
    return pve(procrustes_align(pred, gt).apply(pred), gt)


def oks(pred_kp, gt_kp, visibility, area: float, kappa=None) -> float:
    """Mean over visible keypoints of ``exp(-d^2 / (2 area kappa^2))``."""
    pred = np.asarray(pred_kp, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_kp, dtype=np.float64).reshape(-1, 2)
    vis = np.asarray(visibility).reshape(-1) > 0
    if pred.shape != gt.shape or vis.shape[0] != gt.shape[0]:
        raise ShapeError(f"keypoint shapes differ: {pred.shape}, {gt.shape}, {vis.shape}")
    kappa = COCO_KAPPA if kappa is None else np.asarray(kappa, dtype=np.float64).reshape(-1)
    if kappa.shape[0] != gt.shape[0]:
        raise ShapeError(f"{kappa.shape[0]} falloff constants for {gt.shape[0]} keypoints")
    if not vis.any():
        raise ValueError("OKS needs at least one visible keypoint")
    if not area > 0:
        raise ValueError("instance area must be positive")
    d2 = np.sum((pred - gt) ** 2, axis=1)
    return float(np.mean(np.exp(-d2[vis] / (2.0 * area * kappa[vis] ** 2))))


@dataclass(frozen=True)
class Detection:
    image_id: int
    score: float
    keypoints: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    image_id: int
    keypoints: np.ndarray
    visibility: np.ndarray
    area: float


def _precision_at_recall(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated precision averaged over recall levels."""
    if n_gt == 0:
        return float("nan")
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    rc = tps / n_gt
    pr = tps / np.maximum(tps + fps, 1)
    # make precision non-increasing from the right
    pr = np.maximum.accumulate(pr[::-1])[::-1]
    idx = np.searchsorted(rc, RECALL_POINTS, side="left")
    q = np.zeros(len(RECALL_POINTS))
    hit = idx < len(pr)
    q[hit] = pr[idx[hit]]
    return float(np.mean(q))


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], threshold: float,
                     kappa=None) -> np.ndarray:
    """Greedy score-ordered matching; returns a true-positive flag per detection
    in descending score order (ties keep input order).

    Each detection takes the unmatched ground truth of the same image with the
    highest OKS at or above ``threshold``; later candidates win exact ties.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    by_image: dict[int, list[int]] = {}
    for j, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(j)
    tp = np.zeros(len(order), dtype=bool)
    for r, i in enumerate(order):
        d = dets[i]
        best, best_j = min(threshold, 1 - 1e-10), -1
        for j in by_image.get(d.image_id, []):
            if taken[j]:
                continue
            g = gts[j]
            s = oks(d.keypoints, g.keypoints, g.visibility, g.area, kappa)
            if s < best:
                continue
            best, best_j = s, j
        if best_j >= 0:
            taken[best_j] = True
            tp[r] = True
    return tp


def keypoint_ap(detections: Sequence[Detection], ground_truths: Sequence[GroundTruth],
                thresholds=OKS_THRESHOLDS, kappa=None) -> dict[str, float]:
    """Mean AP over OKS thresholds plus AP at 0.50 and 0.75.

    Ground truths without visible keypoints are left out of matching and
    recall.
    """
    gts = [g for g in ground_truths if np.any(np.asarray(g.visibility) > 0)]
    thresholds = np.asarray(thresholds, dtype=np.float64)
    per = {float(t): _precision_at_recall(match_detections(detections, gts, float(t), kappa), len(gts))
           for t in np.unique(np.concatenate([thresholds, [0.5, 0.75]]))}
    return {
        "AP": float(np.mean([per[float(t)] for t in thresholds])),
        "AP50": per[0.5],
        "AP75": per[0.75],
    }
