"""Figure rendering for the report commands.

Every chart is rendered headless (Agg) with pinned metadata so repeated
runs produce byte-identical PNGs; figures are companions to the CSV
artifacts, never a substitute for them.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .manifest import TOOL_NAME  # noqa: E402

_METADATA = {"Software": TOOL_NAME}
_FIGSIZE = (8.0, 4.5)
_DPI = 120


def _finish(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)


def line_chart(
    path: str,
    title: str,
    xlabel: str,
    ylabel: str,
    series: Mapping[str, Sequence[tuple[float, float]]],
    logy: bool = False,
) -> None:
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for label in sorted(series):
        points = series[label]
        if not points:
            continue
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.plot(xs, ys, marker="o", markersize=2.5, linewidth=1.0, label=label)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def scatter_chart(
    path: str,
    title: str,
    xlabel: str,
    ylabel: str,
    points: Sequence[tuple[float, float]],
    diagonal: bool = True,
) -> None:
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    if points:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.scatter(xs, ys, s=12, alpha=0.7)
        if diagonal:
            lo = min(min(xs), min(ys))
            hi = max(max(xs), max(ys))
            ax.plot([lo, hi], [lo, hi], linewidth=0.8, color="gray", linestyle="--")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def occupancy_chart(
    path: str,
    title: str,
    slot_values: Sequence[tuple[int, float]],
    capacity: float,
) -> None:
    """Allocated traffic per occupied slot, with the team ceiling drawn in."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    if slot_values:
        xs = [v[0] for v in slot_values]
        ys = [v[1] for v in slot_values]
        ax.bar(xs, ys, width=1.0, align="edge", alpha=0.8)
    ax.axhline(capacity, linewidth=0.8, color="red", linestyle="--", label="capacity")
    ax.set_title(title)
    ax.set_xlabel("slot index")
    ax.set_ylabel("allocated (Mbit/s)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _finish(fig, path)
