"""Joint-centric RoI pooling of IUV maps.

Windows are square in normalized image units: centre on the 2D joint, side
``alpha_k * max(w_bbox, h_bbox) + delta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bodymodel import KinematicTree
from .maps import IuvMap, foreground_bbox


@dataclass(frozen=True)
class RoiWindow:
    center: tuple[float, float]
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"window side must be positive, got {self.side}")


@dataclass(frozen=True)
class RoiConfig:
    alpha: Sequence[float] = field(default_factory=lambda: (0.5,) * 24)
    delta: float = 0.1
    out_res: int = 56

    def __post_init__(self):
        if self.out_res < 1:
            raise ValueError("out_res must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


def roi_params(j_k, bbox, cfg: RoiConfig, k: int) -> RoiWindow:
    w_bbox, h_bbox = bbox
    if w_bbox < 0 or h_bbox < 0:
        raise ValueError("bbox extents must be non-negative")
    side = cfg.alpha[k] * max(w_bbox, h_bbox) + cfg.delta
    return RoiWindow((float(j_k[0]), float(j_k[1])), side)


def _taps(coord: np.ndarray):
    i0 = np.floor(coord).astype(np.int64)
    f = coord - i0
    return i0, i0 + 1, 1.0 - f, f


def crop_resample(src, win: RoiWindow, out_res: int, fill="zero"):
    """Bilinear resample of the window ``[c - s/2, c + s/2]^2`` to ``out_res^2``.

    ``src`` is a ``C x h x w`` array or an :class:`IuvMap`. Taps outside the
    source take the fill value: ``"zero"``, ``"background"`` (one-hot way 0,
    IuvMap only) or an explicit per-channel vector.
    """
    if isinstance(src, IuvMap):
        P1, h, w, _ = src.data.shape
        flat = np.moveaxis(src.data, -1, 1).reshape(P1 * 3, h, w)
        if isinstance(fill, str) and fill == "background":
            fill = np.zeros(P1 * 3)
            fill[0] = 1.0
        out = crop_resample(flat, win, out_res, fill)
        return IuvMap(np.moveaxis(out.reshape(P1, 3, out_res, out_res), 1, -1))

    src = np.asarray(src, dtype=np.float64)
    C, h, w = src.shape
    if isinstance(fill, str):
        if fill != "zero":
            raise ValueError("background fill needs an IuvMap")
        fill = np.zeros(C)
    fill = np.asarray(fill, dtype=np.float64).reshape(C)

    cx, cy = win.center
    s = win.side
    step = np.arange(out_res) + 0.5
    # continuous source coordinates with pixel centres at integers
    px = (cx - 0.5 * s) * w + step * (s * w / out_res) - 0.5
    py = (cy - 0.5 * s) * h + step * (s * h / out_res) - 0.5
    x0, x1, wx0, wx1 = _taps(px)
    y0, y1, wy0, wy1 = _taps(py)

    padded = np.empty((C, h + 2, w + 2))
    padded[:] = fill[:, None, None]
    padded[:, 1:-1, 1:-1] = src
    # clip far-outside taps onto the fill border
    xa, xb = np.clip(x0, -1, w) + 1, np.clip(x1, -1, w) + 1
    ya, yb = np.clip(y0, -1, h) + 1, np.clip(y1, -1, h) + 1

    def g(yi, xi):
        return padded[:, yi[:, None], xi[None, :]]

    return (
        g(ya, xa) * (wy0[:, None] * wx0[None, :])
        + g(ya, xb) * (wy0[:, None] * wx1[None, :])
        + g(yb, xa) * (wy1[:, None] * wx0[None, :])
        + g(yb, xb) * (wy1[:, None] * wx1[None, :])
    )


def kept_parts(k: int, tree: KinematicTree, joint_parts: Mapping[int, Sequence[int]] | None = None,
               num_parts: int | None = None) -> list[int]:
    """Part labels surrounding joint ``k``: its own, its parent's and its children's."""
    joints = [k] + [tree.parents[k]] * (tree.parents[k] >= 0) + tree.children(k)
    if joint_parts is None:
        if num_parts is not None and num_parts != len(tree):
            raise ValueError(f"{num_parts} parts != {len(tree)} joints; supply a joint->parts table")
        return sorted(j + 1 for j in joints)
    return sorted({p for j in joints for p in joint_parts[j]})


def simplify_partial(m: IuvMap, k: int, tree: KinematicTree,
                     joint_parts: Mapping[int, Sequence[int]] | None = None) -> IuvMap:
    """Zero every part way except those around joint ``k``; background is kept."""
    keep = np.zeros(m.num_parts + 1, dtype=bool)
    keep[0] = True
    keep[kept_parts(k, tree, joint_parts, m.num_parts)] = True
    out = m.copy()
    out.data[~keep] = 0.0
    return out


def jitter(win: RoiWindow, magnitude=(0.0, 0.0), seed: int = 0) -> RoiWindow:
    """Random shift of the centre and log-uniform rescale of the side."""
    dc, ds = magnitude
    if dc < 0 or ds < 0:
        raise ValueError("jitter magnitudes must be non-negative")
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-dc, dc, size=2)
    scale = np.exp(rng.uniform(-ds, ds))
    return RoiWindow((win.center[0] + shift[0], win.center[1] + shift[1]), win.side * scale)


def pool_joint(m: IuvMap, joints2d, k: int, cfg: RoiConfig, simplify_tree: KinematicTree | None = None):
    """Full partial-map pipeline for joint ``k``: bbox, window, crop, optional simplification."""
    box = foreground_bbox(m)
    extents = (0.0, 0.0) if box is None else box[:2]
    win = roi_params(np.asarray(joints2d)[k], extents, cfg, k)
    part = crop_resample(m, win, cfg.out_res, fill="background")
    if simplify_tree is not None:
        part = simplify_partial(part, k, simplify_tree)
    return part, win
