"""Static SVG snapshots of flock states from JSONL traces.

Each bird renders as a filled circle with two wing segments perpendicular
to its velocity, a velocity arrow, and a dotted view-cone outline.  Output
is built from fixed-precision strings only, so equal inputs yield
byte-identical documents.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .fitness import FitnessParams, upwash_field
from .flock import FlockState

_SCALE = 60.0  # pixels per world unit
_MARGIN = 1.8  # world units around the bounding box
_CONE_REACH = 2.5  # world units of dotted cone edge


def load_trace(path) -> list[dict]:
    """Read a JSONL trace file into a list of records."""
    records = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _fmt(value: float) -> str:
    out = f"{value:.4f}"
    return "0.0000" if out == "-0.0000" else out


def _steps(trace: list[dict]) -> dict[int, dict]:
    return {rec["t"]: rec for rec in trace if rec.get("type") == "step"}


def render_snapshot(trace: list[dict], step: int, upwash_grid: bool = False) -> str:
    """Render the flock at ``step`` of a parsed trace as an SVG document."""
    steps = _steps(trace)
    if step not in steps:
        available = sorted(steps)
        span = f"{available[0]}..{available[-1]}" if available else "none"
        raise ValueError(f"step {step} not in trace; available steps: {span}")
    record = steps[step]
    meta = next((rec for rec in trace if rec.get("type") == "meta"), {})
    wing_span = meta.get("wing_span", 1.0)
    cone_angle = meta.get("view_cone_angle", math.pi / 4)

    positions = np.asarray(record["positions"], dtype=float)
    velocities = np.asarray(record["velocities"], dtype=float)

    x_lo, y_lo = positions.min(axis=0) - _MARGIN
    x_hi, y_hi = positions.max(axis=0) + _MARGIN
    width = (x_hi - x_lo) * _SCALE
    height = (y_hi - y_lo) * _SCALE

    def to_px(point) -> tuple[str, str]:
        # SVG y grows downward; world y grows upward.
        return _fmt((point[0] - x_lo) * _SCALE), _fmt((y_hi - point[1]) * _SCALE)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        "<defs>",
        '<marker id="tip" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">',
        '<path d="M0,0 L6,3 L0,6 z" fill="#1a55a0"/>',
        "</marker>",
        "</defs>",
        f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>',
    ]

    if upwash_grid:
        parts.extend(_grid_cells(positions, velocities, meta, (x_lo, x_hi, y_lo, y_hi)))

    for pos, vel in zip(positions, velocities):
        speed = math.hypot(vel[0], vel[1])
        heading = (vel / speed) if speed > 0 else np.array([1.0, 0.0])
        perp = np.array([-heading[1], heading[0]])
        angle = math.atan2(heading[1], heading[0])

        # Dotted view-cone edges.
        for sign in (-1.0, 1.0):
            edge = angle + sign * cone_angle / 2.0
            tip = pos + _CONE_REACH * np.array([math.cos(edge), math.sin(edge)])
            (x1, y1), (x2, y2) = to_px(pos), to_px(tip)
            parts.append(
                f'<line class="cone" x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" '
                'stroke="#888888" stroke-width="1" stroke-dasharray="3,4"/>'
            )
        # Two wing segments protruding from the body.
        for sign in (-1.0, 1.0):
            inner = pos
            outer = pos + sign * (wing_span / 2.0) * perp
            (x1, y1), (x2, y2) = to_px(inner), to_px(outer)
            parts.append(
                f'<line class="wing" x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" '
                'stroke="#b03030" stroke-width="2.5"/>'
            )
        # Velocity arrow.
        tip = pos + vel
        (x1, y1), (x2, y2) = to_px(pos), to_px(tip)
        parts.append(
            f'<line class="vel" x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" '
            'stroke="#1a55a0" stroke-width="1.5" marker-end="url(#tip)"/>'
        )
        # Body.
        cx, cy = to_px(pos)
        parts.append(
            f'<circle class="bird" cx="{cx}" cy="{cy}" r="5" fill="#b03030"/>'
        )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _grid_cells(positions, velocities, meta, box) -> list[str]:
    """Coarse upwash/downwash shading behind the birds (cosmetic)."""
    x_lo, x_hi, y_lo, y_hi = box
    params = FitnessParams(
        wing_span=meta.get("wing_span", 1.0),
        view_cone_angle=meta.get("view_cone_angle", math.pi / 4),
    )
    state = FlockState(positions, velocities)
    nx = 48
    ny = max(2, int(round(nx * (y_hi - y_lo) / (x_hi - x_lo))))
    xs = np.linspace(x_lo, x_hi, nx, endpoint=False)
    ys = np.linspace(y_lo, y_hi, ny, endpoint=False)
    cell_w = (x_hi - x_lo) / nx
    cell_h = (y_hi - y_lo) / ny
    centers = np.stack(
        np.meshgrid(xs + cell_w / 2.0, ys + cell_h / 2.0, indexing="ij"), axis=-1
    ).reshape(-1, 2)
    values = np.clip(upwash_field(centers, state, params), -1.0, 1.0)

    cells = []
    for (cx, cy), value in zip(centers, values):
        if abs(value) < 0.02:
            continue
        if value > 0:
            # Upwash brightens toward white-yellow.
            shade = f"rgb(255,255,{int(255 - 155 * value)})"
        else:
            shade = f"rgb({int(255 + 120 * value)},{int(255 + 120 * value)},255)"
        px = _fmt((cx - cell_w / 2.0 - x_lo) * _SCALE)
        py = _fmt((y_hi - cy - cell_h / 2.0) * _SCALE)
        cells.append(
            f'<rect class="upwash" x="{px}" y="{py}" width="{_fmt(cell_w * _SCALE)}" '
            f'height="{_fmt(cell_h * _SCALE)}" fill="{shade}"/>'
        )
    return cells
