"""Standalone SVG plots of per-state accuracy and labeling balance."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed hash salt keeps SVG ids stable across runs
plt.rcParams["svg.hashsalt"] = "activeil"


def _save(fig, path: Path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    tmp.replace(path)
    return path


def plot_state_accuracy(curves: Mapping[str, Sequence[float]], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, acc in curves.items():
        ax.plot(range(len(acc)), [100 * a for a in acc], marker="o", label=name)
    ax.set_xlabel("state")
    ax.set_ylabel("top-1 accuracy (%)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_balance_trace(series: Sequence[float], path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(range(1, len(series) + 1), series, lw=1)
    ax.set_xlabel("labeling event")
    ax.set_ylabel("cv of labeled counts")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)
