"""IUV correspondence maps and the map-level operations on them.

An IUV map is stored one-hot as a ``(1+P) x h x w x 3`` array. Way ``p`` holds
the Index indicator in slot 0 and that part's U, V in slots 1 and 2; way 0 is
background.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError


@dataclass
class IuvMap:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[-1] != 3 or self.data.shape[0] < 1:
            raise ShapeError(f"IUV map must be (1+P) x h x w x 3, got {self.data.shape}")

    @property
    def num_parts(self) -> int:
        return self.data.shape[0] - 1

    @property
    def size(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    @property
    def index(self) -> np.ndarray:
        return self.data[..., 0]

    def copy(self) -> "IuvMap":
        return IuvMap(self.data.copy())


def encode_iuv(labels, u=None, v=None, num_parts: int | None = None) -> IuvMap:
    """One-hot encode an integer label image plus per-pixel U, V."""
    labels = np.asarray(labels, dtype=np.int64)
    P = int(labels.max(initial=0)) if num_parts is None else num_parts
    if labels.size and (labels.min() < 0 or labels.max() > P):
        raise ShapeError(f"labels outside 0..{P}")
    h, w = labels.shape
    u = np.zeros((h, w)) if u is None else np.asarray(u, dtype=np.float64)
    v = np.zeros((h, w)) if v is None else np.asarray(v, dtype=np.float64)
    fg = labels > 0
    data = np.zeros((P + 1, h, w, 3))
    rows, cols = np.indices((h, w))
    data[labels, rows, cols, 0] = 1.0
    data[labels, rows, cols, 1] = np.where(fg, u, 0.0)
    data[labels, rows, cols, 2] = np.where(fg, v, 0.0)
    return IuvMap(data)


def decode_index(m: IuvMap) -> np.ndarray:
    """Per-pixel part label; argmax over ways with ties to the lowest index."""
    return np.argmax(m.data[..., 0], axis=0)


def foreground_mask(m: IuvMap) -> np.ndarray:
    return decode_index(m) > 0


def foreground_bbox(m: IuvMap):
    """Tight box over foreground pixels as ``(w_bbox, h_bbox, (cx, cy))``, normalized.

    Returns None for an empty foreground.
    """
    fg = foreground_mask(m)
    if not fg.any():
        return None
    h, w = fg.shape
    ys = np.flatnonzero(fg.any(axis=1))
    xs = np.flatnonzero(fg.any(axis=0))
    x0, x1, y0, y1 = xs[0], xs[-1] + 1, ys[0], ys[-1] + 1
    return (x1 - x0) / w, (y1 - y0) / h, (0.5 * (x0 + x1) / w, 0.5 * (y0 + y1) / h)


def soft_argmax(heatmap) -> tuple[float, float]:
    """Softmax-weighted mean of normalized pixel-centre coordinates ``(x, y)``."""
    hm = np.asarray(heatmap, dtype=np.float64)
    h, w = hm.shape
    p = np.exp(hm - hm.max())
    p /= p.sum()
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    return float(p.sum(axis=0) @ xs), float(p.sum(axis=1) @ ys)


# ---------------------------------------------------------------------------
# dropping strategies


class DropStrategy(str, Enum):
    PART = "part"
    BLOCK = "block"
    UNIT = "unit"


@dataclass(frozen=True)
class DropConfig:
    gamma: float
    strategy: DropStrategy = DropStrategy.PART
    block_size: int = 7
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        object.__setattr__(self, "strategy", DropStrategy(self.strategy))


def _zero_pixels(m: IuvMap, mask: np.ndarray) -> IuvMap:
    out = m.copy()
    out.data[1:, mask, :] = 0.0
    return out


def part_drop(m: IuvMap, cfg: DropConfig) -> IuvMap:
    """Zero whole part ways, each part chosen independently with probability gamma."""
    rng = np.random.default_rng(cfg.rng_seed)
    chosen = rng.random(m.num_parts) < cfg.gamma
    out = m.copy()
    out.data[1:][chosen] = 0.0
    return out


def _box_sum(mask: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """``out[y, x] = sum(mask[y+dy, x+dx] for dy, dx in [lo, hi]^2)`` inside the frame."""
    h, w = mask.shape
    c = np.zeros((h + 1, w + 1))
    c[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
    ys, xs = np.arange(h), np.arange(w)
    y0, y1 = np.clip(ys + lo, 0, h), np.clip(ys + hi + 1, 0, h)
    x0, x1 = np.clip(xs + lo, 0, w), np.clip(xs + hi + 1, 0, w)
    return c[y1][:, x1] - c[y0][:, x1] - c[y1][:, x0] + c[y0][:, x0]


def _block_extent(block_size: int) -> tuple[int, int]:
    lo = -(block_size // 2)
    return lo, lo + block_size - 1


def block_mask(seeds: np.ndarray, block_size: int) -> np.ndarray:
    """Union of ``block_size`` squares centred on each seed pixel, clipped to the frame."""
    lo, hi = _block_extent(block_size)
    return _box_sum(np.asarray(seeds, dtype=np.float64), -hi, -lo) > 0


def _seed_rate(fg: np.ndarray, gamma: float, block_size: int) -> float:
    # P(pixel dropped) = 1 - (1-q)^n with n the foreground seed sites whose block covers it;
    # solve mean over foreground = gamma for q
    if gamma <= 0.0:
        return 0.0
    if gamma >= 1.0:
        return 1.0
    lo, hi = _block_extent(block_size)
    n = _box_sum(fg.astype(np.float64), -hi, -lo)[fg]
    lo_q, hi_q = 0.0, 1.0
    for _ in range(80):
        q = 0.5 * (lo_q + hi_q)
        if np.mean(1.0 - (1.0 - q) ** n) < gamma:
            lo_q = q
        else:
            hi_q = q
    return 0.5 * (lo_q + hi_q)


def drop_block(m: IuvMap, cfg: DropConfig) -> IuvMap:
    """DropBlock restricted to the foreground.

    Seeds are drawn only at foreground pixels, with the per-pixel seed rate
    calibrated so the expected dropped share of foreground pixels is gamma.
    """
    fg = foreground_mask(m)
    if not fg.any():
        return m.copy()
    q = _seed_rate(fg, cfg.gamma, cfg.block_size)
    rng = np.random.default_rng(cfg.rng_seed)
    seeds = (rng.random(fg.shape) < q) & fg
    return _zero_pixels(m, block_mask(seeds, cfg.block_size))


def drop_unit(m: IuvMap, cfg: DropConfig) -> IuvMap:
    """Independent per-pixel dropout of foreground pixels across all part ways."""
    fg = foreground_mask(m)
    rng = np.random.default_rng(cfg.rng_seed)
    return _zero_pixels(m, (rng.random(fg.shape) < cfg.gamma) & fg)


_DROPPERS = {DropStrategy.PART: part_drop, DropStrategy.BLOCK: drop_block, DropStrategy.UNIT: drop_unit}


def apply_drop(m: IuvMap, cfg: DropConfig) -> IuvMap:
    return _DROPPERS[cfg.strategy](m, cfg)


def dropped_fraction(before: IuvMap, after: IuvMap) -> float:
    """Share of the original foreground whose part ways are now all zero."""
    fg = foreground_mask(before)
    if not fg.any():
        return 0.0
    gone = ~np.any(after.data[1:, :, :, 0] > 0, axis=0)
    return float(np.mean(gone[fg]))
