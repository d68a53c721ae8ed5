"""Figure rendering for CLI reports.

All figures go straight to files through the non-interactive Agg backend.
PNG metadata is stripped so repeated runs write identical bytes.
"""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .maps import IuvMap, decode_index  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "image.interpolation": "nearest",
}


@contextmanager
def _figure(path, ncols: int = 1, width: float = 4.0, height: float = 3.0):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, ncols, figsize=(width * ncols, height), squeeze=False)
        try:
            yield fig, axes[0]
            fig.tight_layout()
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path, metadata={"Software": None})
        finally:
            plt.close(fig)


def plot_loss_curves(curves: Mapping[str, Sequence[float]], path, title: str = "training loss") -> None:
    with _figure(path) as (_, (ax,)):
        for name, ys in curves.items():
            ax.plot(np.arange(len(ys)), ys, lw=1.0, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.set_title(title)
        if len(curves) > 1:
            ax.legend()


def plot_matrix(M, path, title: str, vmin: float | None = None, vmax: float | None = None,
                cmap: str = "viridis") -> None:
    """Heat map of a square joint-by-joint matrix (edge mask, correlations)."""
    M = np.asarray(M, dtype=np.float64)
    with _figure(path, width=4.2, height=3.6) as (fig, (ax,)):
        im = ax.imshow(M, vmin=vmin, vmax=vmax, cmap=cmap)
        ax.grid(False)
        ax.set_xlabel("joint")
        ax.set_ylabel("joint")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)


def plot_drop_sweep(gammas: Sequence[float], measured: Mapping[str, Sequence[float]], path) -> None:
    """Measured dropped fraction against the requested rate, one line per strategy."""
    with _figure(path) as (_, (ax,)):
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--", label="target")
        for name, ys in measured.items():
            ax.plot(gammas, ys, marker="o", ms=3, lw=1.0, label=name)
        ax.set_xlabel("gamma")
        ax.set_ylabel("dropped foreground fraction")
        ax.legend()


def plot_iuv(m: IuvMap, path) -> None:
    """Part index, U and V panels of an IUV map."""
    label = decode_index(m)
    u = np.take_along_axis(m.data[..., 1], label[None], axis=0)[0]
    v = np.take_along_axis(m.data[..., 2], label[None], axis=0)[0]
    with _figure(path, ncols=3, width=2.6, height=2.6) as (_, axes):
        for ax, img, name, vmax in zip(axes, (label, u, v), ("I", "U", "V"), (m.num_parts, 1, 1)):
            ax.imshow(img, vmin=0, vmax=vmax, cmap="viridis")
            ax.set_title(name)
            ax.grid(False)
            ax.set_xticks([])
            ax.set_yticks([])
