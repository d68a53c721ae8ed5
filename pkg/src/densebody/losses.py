"""Training objectives and their weighted composition.

Every reduction is a mean over elements, so weights keep their meaning across
resolutions and joint counts. Point losses are per-coordinate L1; the
Euclidean distances live in :mod:`densebody.metrics`.

The IUV and orthogonality terms are built from autodiff nodes (``*_node``)
so they can be trained and gradient-checked; the plain functions evaluate them
on arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ShapeError
from .maps import IuvMap
from .rotation import orthogonality_residual

COMPONENTS = ("iuv", "roi", "smpl", "orth", "vert", "kp3d", "reproj", "refine")


@dataclass(frozen=True)
class LossWeights:
    lambda_iuv: float = 1.0
    lambda_roi: float = 1.0
    lambda_smpl: float = 1.0
    lambda_orth: float = 0.1
    lambda_point: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, f.name, float(v))

    @classmethod
    def from_dict(cls, d: Mapping) -> "LossWeights":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown loss weights: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "LossWeights":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        if not isinstance(d, dict):
            raise ValueError("loss weight file must hold a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(*arrays) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


def _mean_l1(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def _gt_data(gt) -> np.ndarray:
    return gt.data if isinstance(gt, IuvMap) else np.asarray(gt, dtype=np.float64)


def l_iuv_node(pred: Node, gt) -> Node:
    """Cross-entropy over the ``1+P`` ways per pixel plus masked UV L1.

    ``pred`` evaluates to a ``(1+P) x h x w x 3`` array whose Index slot holds
    logits. The UV term averages over the part ways and pixels where the
    ground-truth Index is 1; it is zero when there are none.
    """
    g = _gt_data(gt)
    logits = ad.transpose(ad.slice_(pred, (Ellipsis, 0)), (1, 2, 0))
    target = np.transpose(g[..., 0], (1, 2, 0))
    ce = ad.softmax_cross_entropy(logits, target)
    mask = np.repeat((g[1:, ..., 0] == 1.0)[..., None], 2, axis=-1).astype(np.float64)
    count = mask.sum()
    if count == 0:
        return ce
    uv = ad.hadamard(ad.slice_(pred, (slice(1, None), Ellipsis, slice(1, 3))), mask)
    l1 = ad.l1_to_target(uv, g[1:, ..., 1:3] * mask)
    return ad.add(ce, ad.scale(l1, mask.size / count))


def l_iuv(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    _same_shape(pred, _gt_data(gt))
    return float(ad.forward(l_iuv_node(ad.const(pred), gt)))


def l_roi(pred_heatmaps, gt_heatmaps, pred_joints2d, gt_joints2d) -> float:
    return _mean_l1(pred_heatmaps, gt_heatmaps) + _mean_l1(pred_joints2d, gt_joints2d)


def l_smpl(pred, gt) -> float:
    """Mean absolute difference of flat camera/shape/pose vectors."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"parameter vectors differ: {pred.shape} vs {gt.shape}")
    return _mean_l1(pred, gt)


def l_orth_node(rotations: Node) -> Node:
    """Sum over matrices of ``||R R^T - I||_F`` for a node holding ``K x 3 x 3``."""
    d = ad.add(ad.matmul(rotations, ad.swap_last(rotations)), -np.eye(3))
    return ad.reduce_sum(ad.sqrt(ad.reduce_sum(ad.hadamard(d, d), axis=(1, 2))))


def l_orth(rotations) -> float:
    R = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    return float(np.sum(orthogonality_residual(R)))


def l_points(pred_vertices, gt_vertices, pred_kp3d, gt_kp3d, pred_kp2d, gt_kp2d):
    """``(L_vert, L_3Dkp, L_reproj)`` as per-coordinate mean L1."""
    return (
        _mean_l1(pred_vertices, gt_vertices),
        _mean_l1(pred_kp3d, gt_kp3d),
        _mean_l1(pred_kp2d, gt_kp2d),
    )


def total_loss(components: Mapping[str, float], w: LossWeights | None = None):
    """Weighted sum of the named components; returns ``(total, breakdown)``.

    ``components`` needs every key of :data:`COMPONENTS`. The breakdown holds
    each weighted term plus the two stage subtotals.
    """
    w = LossWeights() if w is None else w
    missing = [k for k in COMPONENTS if k not in components]
    if missing:
        raise KeyError(f"missing loss components: {missing}")
    c = {k: float(components[k]) for k in COMPONENTS}
    terms = {
        "iuv": w.lambda_iuv * c["iuv"],
        "roi": w.lambda_roi * c["roi"],
        "smpl": w.lambda_smpl * c["smpl"],
        "orth": w.lambda_orth * c["orth"],
        "point": w.lambda_point * (c["vert"] + c["kp3d"] + c["reproj"]),
        "refine": c["refine"],
    }
    terms["stage_iuv"] = terms["iuv"] + terms["roi"]
    terms["stage_smpl"] = terms["smpl"] + terms["orth"] + terms["point"]
    total = terms["stage_iuv"] + terms["stage_smpl"] + terms["refine"]
    return total, terms
