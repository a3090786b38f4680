"""Static trajectory figures written as SVG.

The road frame is drawn with longitudinal position on the horizontal axis and
lateral position on the vertical axis, so lanes appear as horizontal guides.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "gisnet",  # stable element ids between runs
    "svg.fonttype": "none",
    "path.simplify": False,  # keep every vertex so the SVG can be read back
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

STROKES = {
    "history": dict(color="0.35", linestyle="--", linewidth=1.4),
    "truth": dict(color="#1b7837", linestyle="-", linewidth=1.8),
    "prediction": dict(color="#c51b7d", linestyle="-", linewidth=1.8, marker="o", markersize=2.5),
}


def lane_guides(lateral: np.ndarray, lane_width: float) -> np.ndarray:
    """Lane boundaries (multiples of the lane width) covering ``lateral`` with one lane of margin."""
    lo = np.floor(lateral.min() / lane_width) - 1
    hi = np.ceil(lateral.max() / lane_width) + 1
    return np.arange(lo, hi + 1) * lane_width


def plot_prediction(path, history, prediction, truth, lane_width: float = 3.7, title: str = "") -> None:
    """Write history (dashed), prediction and ground truth, all absolute (x lateral, y longitudinal)."""
    history = np.asarray(history, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    everything = np.concatenate([history, prediction, truth])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 2.6))
        for k, y in enumerate(lane_guides(everything[:, 0], lane_width)):
            ax.axhline(y, color="0.8", linewidth=0.8, zorder=0, gid=f"lane-{k}")
        for name, pts in (("history", history), ("truth", truth), ("prediction", prediction)):
            (line,) = ax.plot(pts[:, 1], pts[:, 0], label=name, **STROKES[name])
            line.set_gid(name)
        ax.set_xlabel("longitudinal position (m)")
        ax.set_ylabel("lateral position (m)")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left", frameon=False, ncol=3)
        fig.tight_layout()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
