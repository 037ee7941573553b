"""SVG plots derived from a trajectory table."""

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .formats import TrajectoryTable  # noqa: E402

logger = logging.getLogger(__name__)


def _step_rows(table: TrajectoryTable) -> np.ndarray:
    """Index of the last row of every step."""
    steps = table.column("step")
    if steps.size == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(np.append(np.diff(steps) != 0, True))


def _shade_replanning(ax, table: TrajectoryTable) -> None:
    time, mode = table.column("time"), table.column("mode")
    active = mode > 0.5
    if not np.any(active):
        return
    edges = np.flatnonzero(np.diff(np.concatenate([[0], active.astype(int), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        ax.axvspan(time[start], time[stop - 1], color="tab:orange", alpha=0.15, lw=0)


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    logger.debug(f"Wrote {path}")
    return path


def plot_visibility_timeline(table: TrajectoryTable, path: Path, threshold: float) -> Path:
    """Visibility score per step; green where it is at or above the threshold."""
    rows = _step_rows(table)
    time = table.column("time")[rows]
    score = table.column("visibility")[rows]
    fig, ax = plt.subplots(figsize=(7, 2.5))
    _shade_replanning(ax, table)
    seen = score >= threshold
    ax.scatter(time[~seen], score[~seen], s=12, color="tab:red", label="below threshold")
    ax.scatter(time[seen], score[seen], s=12, color="tab:green", label="target visible")
    ax.axhline(threshold, color="0.4", ls="--", lw=1)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("visibility score")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="lower right", fontsize="small")
    return _save(fig, path)


def plot_distance_timeline(table: TrajectoryTable, path: Path, d_safe: float) -> Path:
    """Closest robot-to-obstacle distance, and to intruders when there are any."""
    time = table.column("time")
    fig, ax = plt.subplots(figsize=(7, 2.5))
    _shade_replanning(ax, table)
    ax.plot(time, table.column("min_distance"), lw=1.2, label="obstacles")
    intruder = table.column("intruder_distance")
    if np.any(np.isfinite(intruder)):
        ax.plot(time, np.where(np.isfinite(intruder), intruder, np.nan), lw=1.2, label="intruder")
        ax.axhline(d_safe, color="tab:red", ls="--", lw=1, label="d_safe")
    ax.axhline(0.0, color="0.3", lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("distance (m)")
    ax.legend(loc="upper right", fontsize="small")
    return _save(fig, path)


def plot_object_paths(table: TrajectoryTable, path: Path) -> Path:
    """Object path in the xy and yz planes."""
    x, y, z = (table.column(c) for c in ("obj_x", "obj_y", "obj_z"))
    fig, (ax_xy, ax_yz) = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, (a, b), labels in ((ax_xy, (x, y), ("x (m)", "y (m)")), (ax_yz, (y, z), ("y (m)", "z (m)"))):
        ax.plot(a, b, lw=1.2)
        if a.size:
            ax.plot(a[0], b[0], "o", color="tab:blue", ms=4)
            ax.plot(a[-1], b[-1], "s", color="tab:green", ms=4)
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        ax.set_aspect("equal", adjustable="datalim")
    return _save(fig, path)


def emit_plots(table: TrajectoryTable, output_dir: Path, threshold: float, d_safe: float) -> list[Path]:
    output_dir = Path(output_dir)
    return [
        plot_visibility_timeline(table, output_dir / "visibility.svg", threshold),
        plot_distance_timeline(table, output_dir / "distance.svg", d_safe),
        plot_object_paths(table, output_dir / "paths.svg"),
    ]
