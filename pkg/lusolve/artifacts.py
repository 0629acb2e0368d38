"""
Deterministic writers: JSON with sorted keys and 17-digit floats, `t,u,v` CSV
files and fixed-canvas SVG plots.
"""

import csv
import json
import math
import re
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel

from lusolve.curves import Band
from lusolve.errors import ProblemFileError
from lusolve.flow import Trajectory

logger = structlog.get_logger()

TRAJECTORY_HEADER = ("t", "u", "v")
MANIFOLD_HEADER = ("u0", "v", "direction")
CANVAS_INCHES = (8.0, 5.0)
CANVAS_DPI = 100
AXIS_PAD = 0.05

_FLOAT_MARK = re.compile(r'"@@f:([^"@]+)@@"')


def format_float(x: float) -> str:
    text = format(x, ".17g")
    if re.fullmatch(r"-?\d+", text):
        text += ".0"
    return text


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _prepare(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return _prepare(obj.model_dump(mode="python"))
    if isinstance(obj, Enum):
        return _prepare(obj.value)
    if isinstance(obj, dict):
        return {str(k): _prepare(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_prepare(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _prepare(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return f"@@f:{format_float(x)}@@" if math.isfinite(x) else None
    if isinstance(obj, (complex, np.complexfloating)):
        return [_prepare(obj.real), _prepare(obj.imag)]
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def dumps(obj: Any) -> str:
    """JSON text that is byte-identical for identical inputs."""
    text = json.dumps(_prepare(obj), sort_keys=True, indent=2, ensure_ascii=False)
    return _FLOAT_MARK.sub(r"\1", text) + "\n"


def write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8", newline="\n")
    return path


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_trajectory_csv(path: Path, traj: Trajectory) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(
        path,
        np.column_stack([traj.t, traj.u, traj.v]),
        fmt="%.17g",
        delimiter=",",
        header=",".join(TRAJECTORY_HEADER),
        comments="",
        newline="\n",
    )
    return path


def read_trajectory_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    if tuple(header.split(",")) != TRAJECTORY_HEADER:
        raise ProblemFileError(f"expected header {','.join(TRAJECTORY_HEADER)!r}, got {header!r}", str(path), 1)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise ProblemFileError(f"expected 3 columns, got {data.shape[1]}", str(path), 2)
    return data[:, 0], data[:, 1], data[:, 2]


def write_rows_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return path


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def _padded(values: Sequence[np.ndarray]) -> tuple[float, float]:
    lo = min(float(np.min(v)) for v in values)
    hi = max(float(np.max(v)) for v in values)
    span = hi - lo if hi > lo else max(abs(hi), 1.0)
    return lo - AXIS_PAD * span, hi + AXIS_PAD * span


def plot_band(
    path: Path,
    band: Band,
    trajectories: Sequence[tuple[np.ndarray, np.ndarray]] = (),
    orbits: Sequence[tuple[np.ndarray, np.ndarray]] = (),
    title: Optional[str] = None,
) -> Path:
    """Barriers, periodic orbits and trajectories (t, u) on an 800x500 canvas."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t_lo = min([0.0] + [float(np.min(t)) for t, _ in trajectories])
    t_hi = max([band.period] + [float(np.max(t)) for t, _ in trajectories])
    grid = np.linspace(t_lo, t_hi, 1024)
    lower, upper = band.lower(grid), band.upper(grid)

    with plt.rc_context({"svg.hashsalt": "lusolve", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=CANVAS_INCHES, dpi=CANVAS_DPI)
        for t, u in trajectories:
            ax.plot(t, u, color="#555555", linewidth=0.8)
        for t, u in orbits:
            period = t[-1] - t[0]
            reps = np.arange(math.floor(t_lo / period), math.ceil(t_hi / period))
            tt = np.concatenate([t + k * period for k in reps])
            uu = np.tile(u, len(reps))
            keep = (tt >= t_lo) & (tt <= t_hi)
            ax.plot(tt[keep], uu[keep], color="#d62728", linewidth=1.4)
        ax.plot(grid, lower, color="#1f77b4", linewidth=1.6, label="alpha")
        ax.plot(grid, upper, color="#2ca02c", linewidth=1.6, label="beta")

        ax.set_xlim(*_padded([grid]))
        ax.set_ylim(*_padded([lower, upper] + [u for _, u in trajectories] + [u for _, u in orbits]))
        ax.set_xlabel("t")
        ax.set_ylabel("u")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right", fontsize=9)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.debug("Plot written", path=str(path), trajectories=len(trajectories))
    return path
