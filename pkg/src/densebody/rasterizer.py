"""Z-buffered software rasterization of a posed mesh into ground-truth IUV maps.

Coordinates handed to the rasterizer are normalized image units: ``x`` spans
columns and ``y`` rows, both in ``[0, 1]`` across the frame. Pixels are sampled
at their centres and smaller depth is nearer. Edge pixels follow the top-left
fill rule.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bodymodel import BodyModel, WeakPerspectiveCamera, project_weak_perspective, skin
from .maps import IuvMap, encode_iuv

THREADS_ENV = "DENSEBODY_THREADS"


@dataclass(frozen=True)
class RasterConfig:
    h: int = 56
    w: int = 56

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValueError(f"raster extents must be >= 1, got {self.h}x{self.w}")


def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by) -> bool:
    dx, dy = bx - ax, by - ay
    return (dy == 0 and dx > 0) or dy < 0


def _raster_band(r0, r1, cfg, xy, z, faces, face_part, uv, out_label, out_u, out_v):
    """Rasterize rows ``[r0, r1)``; writes only into that band of the outputs."""
    h, w = r1 - r0, cfg.w
    zbuf = np.full((h, w), np.inf)
    label = np.zeros((h, w), dtype=np.int64)
    uu = np.zeros((h, w))
    vv = np.zeros((h, w))
    for f, (i0, i1, i2) in enumerate(faces):
        (x0, y0), (x1, y1), (x2, y2) = xy[i0], xy[i1], xy[i2]
        area = _edge(x0, y0, x1, y1, x2, y2)
        if area == 0 or not np.isfinite(area):
            continue
        if area < 0:
            i1, i2 = i2, i1
            (x1, y1), (x2, y2) = (x2, y2), (x1, y1)
            area = -area
        # candidate pixels whose centres can fall inside the triangle
        cx0 = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        cx1 = min(int(np.ceil(max(x0, x1, x2) - 0.5)), w - 1)
        cy0 = max(int(np.floor(min(y0, y1, y2) - 0.5)), r0)
        cy1 = min(int(np.ceil(max(y0, y1, y2) - 0.5)), r1 - 1)
        if cx0 > cx1 or cy0 > cy1:
            continue
        px = np.arange(cx0, cx1 + 1) + 0.5
        py = (np.arange(cy0, cy1 + 1) + 0.5)[:, None]
        e0 = _edge(x1, y1, x2, y2, px, py)
        e1 = _edge(x2, y2, x0, y0, px, py)
        e2 = _edge(x0, y0, x1, y1, px, py)
        inside = (
            ((e0 > 0) | ((e0 == 0) & _top_left(x1, y1, x2, y2)))
            & ((e1 > 0) | ((e1 == 0) & _top_left(x2, y2, x0, y0)))
            & ((e2 > 0) | ((e2 == 0) & _top_left(x0, y0, x1, y1)))
        )
        if not inside.any():
            continue
        l0, l1, l2 = e0 / area, e1 / area, e2 / area
        depth = l0 * z[i0] + l1 * z[i1] + l2 * z[i2]
        sub = (slice(cy0 - r0, cy1 - r0 + 1), slice(cx0, cx1 + 1))
        win = inside & (depth < zbuf[sub])
        if not win.any():
            continue
        zbuf[sub][win] = depth[win]
        label[sub][win] = face_part[f]
        uu[sub][win] = (l0 * uv[i0, 0] + l1 * uv[i1, 0] + l2 * uv[i2, 0])[win]
        vv[sub][win] = (l0 * uv[i0, 1] + l1 * uv[i1, 1] + l2 * uv[i2, 1])[win]
    out_label[r0:r1] = label
    out_u[r0:r1] = np.clip(uu, 0.0, 1.0)
    out_v[r0:r1] = np.clip(vv, 0.0, 1.0)


def rasterize(points2d, depth, faces, face_part, vertex_uv, num_parts: int,
              cfg: RasterConfig, workers: int | None = None) -> IuvMap:
    """Rasterize triangles given normalized 2D vertex positions and depths.

    Rows are split into bands processed independently, so the output does not
    depend on ``workers``.
    """
    xy = np.asarray(points2d, dtype=np.float64) * np.array([cfg.w, cfg.h], dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    face_part = np.asarray(face_part, dtype=np.int64)
    uv = np.asarray(vertex_uv, dtype=np.float64)
    label = np.zeros((cfg.h, cfg.w), dtype=np.int64)
    u = np.zeros((cfg.h, cfg.w))
    v = np.zeros((cfg.h, cfg.w))
    n = max(1, min(workers or default_workers(), cfg.h))
    bounds = np.linspace(0, cfg.h, n + 1).astype(int)
    args = (cfg, xy, z, faces, face_part, uv, label, u, v)
    if n == 1:
        _raster_band(0, cfg.h, *args)
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            jobs = [pool.submit(_raster_band, bounds[i], bounds[i + 1], *args) for i in range(n)]
            for j in jobs:
                j.result()
    return encode_iuv(label, u, v, num_parts)


def render_iuv(model: BodyModel, theta, beta, cam: WeakPerspectiveCamera,
               cfg: RasterConfig, workers: int | None = None) -> IuvMap:
    """Ground-truth IUV map of the posed model under a weak-perspective camera."""
    verts = skin(model, theta, beta)
    xy = project_weak_perspective(verts, cam)
    return rasterize(xy, verts[:, 2], model.faces, model.face_part, model.vertex_uv,
                     model.num_parts, cfg, workers)


def render_joint_heatmaps(joints2d, sigma: float, cfg: RasterConfig) -> np.ndarray:
    """``K x h x w`` Gaussians centred on normalized joint positions."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    j = np.asarray(joints2d, dtype=np.float64).reshape(-1, 2)
    xs = (np.arange(cfg.w) + 0.5) / cfg.w
    ys = (np.arange(cfg.h) + 0.5) / cfg.h
    dx = xs[None, None, :] - j[:, 0, None, None]
    dy = ys[None, :, None] - j[:, 1, None, None]
    return np.exp(-(dx**2 + dy**2) / (2 * sigma**2))
