"""Figures written next to the CSV reports."""
from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "svg.hashsalt": "amfst",
}


def plot_duration_curves(curves: Mapping[str, Sequence[tuple[int, float]]], path, title: str | None = None):
    """Mean endpoint error against frame index, one line per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, curve in curves.items():
            if not curve:
                continue
            t, v = zip(*curve)
            ax.plot(t, v, lw=1.4, label=name)
        ax.set_xlabel("frame")
        ax.set_ylabel("MEE (px)")
        if title:
            ax.set_title(title)
        ax.set_xlim(left=0)
        ax.set_ylim(bottom=0)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
