"""Deterministic exports: trajectory CSVs, an SVG overlay, report files.

Every byte written here is a pure function of the inputs (floats via repr,
JSON with sorted keys, no timestamps), so identical runs produce identical
files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .geometry import CircleObstacle, EnvironmentMap, RectObstacle, wrap_angle

CSV_HEADER = "time_s,x_m,y_m,heading_rad,v_mps,w_radps,active_subtask_id,position_error_m,heading_error_rad"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(path, segments, subtasks: dict) -> None:
    """Write one trajectory (a list of RolloutRecords executed in sequence).

    Errors are measured against the active subtask's exit region; the
    first row of every segment after the first is skipped because it
    duplicates the previous segment's final state.
    """
    lines = [CSV_HEADER]
    t_base = 0.0
    for k, rec in enumerate(segments):
        sub = subtasks[rec.subtask_id]
        ex = sub.exit
        times = rec.times
        start_row = 1 if k > 0 else 0
        for i in range(start_row, rec.n_steps + 1):
            s = rec.states[i]
            pos_err = math.hypot(s[0] - ex.center_x, s[1] - ex.center_y)
            head_err = abs(wrap_angle(s[2] - ex.heading))
            lines.append(
                ",".join(
                    (
                        _fmt(t_base + times[i]),
                        _fmt(s[0]),
                        _fmt(s[1]),
                        _fmt(s[2]),
                        _fmt(s[3]),
                        _fmt(s[4]),
                        rec.subtask_id,
                        _fmt(pos_err),
                        _fmt(head_err),
                    )
                )
            )
        t_base += rec.n_steps * rec.dt
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path):
    """Parse a trajectory CSV back into (columns dict, row count)."""
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected CSV header")
    cols = {name: [] for name in CSV_HEADER.split(",")}
    for line in text[1:]:
        parts = line.split(",")
        for name, val in zip(cols, parts):
            cols[name].append(val if name == "active_subtask_id" else float(val))
    return cols, len(text) - 1


_PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e", "#8c564b")
_SCALE = 24.0  # px per meter
_MARGIN = 12.0


def _svg_xy(x: float, y: float, env: EnvironmentMap):
    b = env.bounds
    return (
        _MARGIN + (x - b.x_min) * _SCALE,
        _MARGIN + (b.y_max - y) * _SCALE,
    )


def _f(x: float) -> str:
    return f"{x:.2f}"


def render_scene_svg(
    env: EnvironmentMap,
    subtasks,
    trajectories,
) -> str:
    """SVG overlay: bounds, obstacles, entry/exit discs, trajectory polylines.

    `trajectories` is a list of (x_list, y_list) pairs in world coordinates.
    """
    b = env.bounds
    width = (b.x_max - b.x_min) * _SCALE + 2 * _MARGIN
    height = (b.y_max - b.y_min) * _SCALE + 2 * _MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" '
        f'height="{_f(height)}" viewBox="0 0 {_f(width)} {_f(height)}">',
        f'<rect x="{_f(_MARGIN)}" y="{_f(_MARGIN)}" '
        f'width="{_f(width - 2 * _MARGIN)}" height="{_f(height - 2 * _MARGIN)}" '
        'fill="#fafafa" stroke="#333333" stroke-width="2"/>',
    ]
    for ob in env.obstacles:
        if isinstance(ob, RectObstacle):
            x0, y0 = _svg_xy(ob.x_min, ob.y_max, env)
            parts.append(
                f'<rect x="{_f(x0)}" y="{_f(y0)}" '
                f'width="{_f((ob.x_max - ob.x_min) * _SCALE)}" '
                f'height="{_f((ob.y_max - ob.y_min) * _SCALE)}" '
                'fill="#888888" stroke="#444444"/>'
            )
        elif isinstance(ob, CircleObstacle):
            cx, cy = _svg_xy(ob.center_x, ob.center_y, env)
            parts.append(
                f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(ob.radius * _SCALE)}" '
                'fill="#888888" stroke="#444444"/>'
            )
    for sub in subtasks:
        for region, color in ((sub.entry, "#ffd966"), (sub.exit, "#03c91d")):
            cx, cy = _svg_xy(region.center_x, region.center_y, env)
            parts.append(
                f'<circle cx="{_f(cx)}" cy="{_f(cy)}" '
                f'r="{_f(region.position_radius * _SCALE)}" fill="{color}" '
                f'fill-opacity="0.25" stroke="{color}"/>'
            )
        hx, hy = _svg_xy(sub.exit.center_x, sub.exit.center_y, env)
        parts.append(
            f'<text x="{_f(hx)}" y="{_f(hy)}" font-size="10" '
            f'text-anchor="middle" fill="#222222">{sub.id}</text>'
        )
    for i, (xs, ys) in enumerate(trajectories):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(
            "{},{}".format(_f(px), _f(py))
            for px, py in (_svg_xy(x, y, env) for x, y in zip(xs, ys))
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export_results(
    reports,
    rollouts,
    output_dir,
    env: EnvironmentMap | None = None,
    subtasks=None,
    metadata: dict | None = None,
) -> list:
    """Write run metadata, per-iteration reports, trajectory CSVs and the
    trajectory overlay SVG; returns the list of written paths.

    `rollouts` is a list of trajectories, each a list of RolloutRecords.
    The SVG is emitted only when there is at least one trajectory and the
    environment is known.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []

    meta = {"format": "compnav-run", "version": 1}
    meta.update(metadata or {})
    meta_path = out / "run.json"
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    manifest.append(meta_path)

    for rep in reports:
        rep_path = out / f"iteration_{rep.iteration:02d}.json"
        rep_path.write_text(json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n")
        manifest.append(rep_path)

    sub_map = {c.id: c for c in subtasks} if subtasks else {}
    trajectories = []
    for i, segments in enumerate(rollouts):
        csv_path = out / f"trajectory_{i:03d}.csv"
        write_trajectory_csv(csv_path, segments, sub_map)
        manifest.append(csv_path)
        xs = []
        ys = []
        for k, rec in enumerate(segments):
            start = 1 if k > 0 else 0
            xs.extend(rec.states[start:, 0].tolist())
            ys.extend(rec.states[start:, 1].tolist())
        trajectories.append((xs, ys))

    if trajectories and env is not None:
        svg_path = out / "trajectories.svg"
        svg_path.write_text(render_scene_svg(env, subtasks or (), trajectories))
        manifest.append(svg_path)

    return [str(p) for p in manifest]


def render_svg_from_csvs(csv_paths, env: EnvironmentMap, subtasks) -> str:
    trajectories = []
    for p in csv_paths:
        cols, _ = read_trajectory_csv(p)
        trajectories.append((cols["x_m"], cols["y_m"]))
    return render_scene_svg(env, subtasks, trajectories)
