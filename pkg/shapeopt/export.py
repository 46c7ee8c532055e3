"""Run artifacts: convergence CSV, mesh snapshots, SVG shape plots and summary."""

from __future__ import annotations

import json
import logging
import platform
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import psutil

from .mesh import ShapeSpec, TriMesh, interface_polylines, write_snapshot
from .optimizer import OptHistory, OptState

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iteration", "J", "t", "sigma", "grad_norm", "accepted")
SVG_SIZE = 500
SVG_MARGIN = 20
MAX_PLOTTED_ITERATIONS = 8


def history_frame(history: OptHistory) -> pd.DataFrame:
    """Iteration records as a table with the history columns."""
    rows = [
        (r.n, r.J, r.t, r.sigma, r.grad_norm, int(r.accepted)) for r in history.records
    ]
    return pd.DataFrame(rows, columns=list(HISTORY_COLUMNS))


def write_history_csv(history: OptHistory, path: str | Path) -> Path:
    """One row per iteration; floats carry 17 significant digits."""
    path = Path(path)
    history_frame(history).to_csv(
        path, index=False, float_format="%.17g", na_rep="nan", lineterminator="\n"
    )
    return path


def read_history_csv(path: str | Path) -> list[dict[str, float]]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return [
        {
            "iteration": int(row.iteration),
            "J": float(row.J),
            "t": float(row.t),
            "sigma": float(row.sigma),
            "grad_norm": float(row.grad_norm),
            "accepted": int(row.accepted),
        }
        for row in frame.itertuples(index=False)
    ]


def snapshot_path(output_dir: str | Path, iteration: int) -> Path:
    return Path(output_dir) / f"mesh_{iteration:04d}.mesh.txt"


def write_state_snapshot(state: OptState, output_dir: str | Path) -> Path:
    """Mesh of one iterate with its state, adjoint and interpolated target."""
    return write_snapshot(
        state.mesh,
        snapshot_path(output_dir, state.iteration),
        {
            "u": state.u_h.values,
            "p": state.p_h.values,
            "u_d": state.data.target(state.mesh).values,
        },
    )


def select_iterations(history: OptHistory, limit: int = MAX_PLOTTED_ITERATIONS) -> list[int]:
    """Evenly spaced accepted iterations, always including the first and last."""
    keys = sorted(history.meshes)
    if len(keys) <= limit:
        return keys
    picks = np.linspace(0, len(keys) - 1, limit).round().astype(int)
    return [keys[i] for i in sorted(set(picks.tolist()))]


def _color(fraction: float) -> str:
    # blue -> red
    red = int(round(255 * fraction))
    return f"#{red:02x}40{255 - red:02x}"


def _xy(point) -> tuple[float, float]:
    scale = SVG_SIZE - 2 * SVG_MARGIN
    return SVG_MARGIN + scale * point[0], SVG_SIZE - SVG_MARGIN - scale * point[1]


def _polyline_path(mesh: TriMesh, loop: list[int]) -> str:
    coords = [_xy(mesh.vertices[i]) for i in loop]
    head = "M {:.3f} {:.3f}".format(*coords[0])
    body = " ".join("L {:.3f} {:.3f}".format(*c) for c in coords[1:])
    return f"{head} {body} Z"


def write_svg(
    history: OptHistory,
    target_shape: ShapeSpec,
    path: str | Path,
    iterations: list[int] | None = None,
) -> Path:
    """Unit square, dashed target discs and the interface of selected iterates."""
    path = Path(path)
    iterations = select_iterations(history) if iterations is None else iterations
    scale = SVG_SIZE - 2 * SVG_MARGIN
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" '
        f'height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect class="domain" x="{SVG_MARGIN}" y="{SVG_MARGIN}" width="{scale}" '
        f'height="{scale}" fill="none" stroke="black"/>',
    ]
    for disc in target_shape.discs:
        cx, cy = _xy(disc.center)
        lines.append(
            f'<circle class="target" cx="{cx:.3f}" cy="{cy:.3f}" r="{scale * disc.radius:.3f}" '
            f'fill="none" stroke="gray" stroke-dasharray="6 4"/>'
        )
    span = max(len(iterations) - 1, 1)
    for rank, n in enumerate(iterations):
        mesh = history.meshes[n]
        color = _color(rank / span)
        for loop in interface_polylines(mesh):
            lines.append(
                f'<path class="interface" data-iteration="{n}" d="{_polyline_path(mesh, loop)}" '
                f'fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n")
    return path


def environment_record() -> dict[str, Any]:
    """Host and process facts for the run summary."""
    try:
        memory = psutil.virtual_memory()
        process = psutil.Process()
        info = process.memory_info()
        return {
            "platform": platform.platform(),
            "python_version": platform.python_version(),
            "cpu_count": psutil.cpu_count(),
            "memory_total_gb": round(memory.total / (1024**3), 2),
            "resident_mb": round(getattr(info, "peak_wset", info.rss) / (1024**2), 2),
        }
    except Exception as e:
        return {
            "platform": platform.platform(),
            "python_version": platform.python_version(),
            "error": f"Failed to collect full system info: {e}",
        }


def summary(history: OptHistory) -> dict[str, Any]:
    last = history.records[-1]
    return {
        "initial_J": history.initial_cost,
        "final_J": history.final_cost,
        "iterations": last.n,
        "accepted_steps": history.accepted_steps,
        "final_sigma": history.final_sigma,
        "sigma_reductions": len(history.sigma_reductions),
        "termination": history.termination.value,
        "wall_time": last.wall_time,
    }


def write_summary(history: OptHistory, path: str | Path, **extra: Any) -> Path:
    path = Path(path)
    data = summary(history) | extra
    data["environment"] = environment_record()
    with open(path, "w") as f:
        json.dump(data, f, indent=2, default=str)
    return path
