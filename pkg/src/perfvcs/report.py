"""File emitters for profiles: SVG scatter plot, folded stacks, bar-chart CSV.

All output is deterministic so it can be compared against golden files.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from perfvcs.models import ORDER, PerformanceModel, series_from_profile
from perfvcs.profile import Profile, format_number

WIDTH, HEIGHT = 800, 600
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 80, 30, 40, 60
CURVE_SAMPLES = 200


@dataclass(frozen=True)
class Scale:
    """Maps data coordinates to SVG pixels inside the plot area."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def px(self, x: float) -> float:
        span = self.x_hi - self.x_lo or 1.0
        return MARGIN_LEFT + (x - self.x_lo) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)

    def py(self, y: float) -> float:
        span = self.y_hi - self.y_lo or 1.0
        return HEIGHT - MARGIN_BOTTOM - (y - self.y_lo) / span * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)


def best_model(models, uid: str) -> Optional[PerformanceModel]:
    """Highest-r² model of ``uid``; ties go to the simpler family."""
    mine = [m for m in models if m.uid == uid]
    if not mine:
        return None
    return min(mine, key=lambda m: (-round(m.r_squared, 12), ORDER.get(m.family, len(ORDER))))


def _c(v: float) -> str:
    return f"{v:.2f}"


def scatter_svg(profile: Profile, uid: str, kind: str = "inclusive") -> str:
    series = series_from_profile(profile, kind).get(uid)
    if series is None or not series.points:
        raise ValueError(f"no data points for {uid!r} (records need a workload size)")
    x, y = series.x, series.y
    model = best_model(profile.models, uid)
    curve = None
    if model is not None:
        lo, hi = model.x_interval
        cx = np.linspace(lo, hi, CURVE_SAMPLES)
        cy = model.predict(cx)
        if np.all(np.isfinite(cy)):
            curve = (cx, cy)
    ys = [0.0, float(y.max())] + ([float(curve[1].min()), float(curve[1].max())] if curve else [])
    x_lo, x_hi = float(x.min()), float(x.max())
    if curve:
        x_lo, x_hi = min(x_lo, float(curve[0][0])), max(x_hi, float(curve[0][-1]))
    scale = Scale(x_lo, x_hi, min(ys), max(ys) * 1.05 if max(ys) > 0 else 1.0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-size="16">{escape(uid)}</text>',
    ]
    x0, y0 = MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM
    out.append(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{WIDTH - MARGIN_RIGHT}" y2="{y0}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN_TOP}" stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        xv = scale.x_lo + frac * (scale.x_hi - scale.x_lo)
        yv = scale.y_lo + frac * (scale.y_hi - scale.y_lo)
        out.append(f'<text x="{_c(scale.px(xv))}" y="{y0 + 18}" text-anchor="middle" font-size="11">{xv:.6g}</text>')
        out.append(f'<text x="{x0 - 6}" y="{_c(scale.py(yv))}" text-anchor="end" font-size="11">{yv:.6g}</text>')
    out.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">workload size</text>')
    out.append(f'<text x="20" y="{HEIGHT / 2:.0f}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 20 {HEIGHT / 2:.0f})">{escape(kind)} time [µs]</text>')
    for xi, yi in zip(x, y):
        out.append(f'<circle class="point" cx="{_c(scale.px(xi))}" cy="{_c(scale.py(yi))}" r="3" fill="steelblue"/>')
    if curve:
        pts = " ".join(f"{_c(scale.px(a))},{_c(scale.py(b))}" for a, b in zip(*curve))
        out.append(f'<polyline class="model" points="{pts}" fill="none" stroke="crimson" stroke-width="2"/>')
        legend = f"{model.describe()} (R² = {model.r_squared:.4f})"
    elif model is not None:
        legend = f"{model.describe()} not drawable over the data range"
    else:
        legend = "no model fitted: points only"
    out.append(f'<text class="legend" x="{WIDTH - MARGIN_RIGHT - 10}" y="{MARGIN_TOP + 14}" '
               f'text-anchor="end" font-size="12">{escape(legend)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_scatter(profile: Profile, uid: str, out_path, kind: str = "inclusive") -> Path:
    path = Path(out_path)
    path.write_text(scatter_svg(profile, uid, kind), encoding="utf-8")
    return path


def folded_stacks(profile: Profile) -> str:
    """``caller;...;uid amount`` per exact stack, summing exclusive amounts."""
    totals: dict[str, float] = {}
    for r in profile.resources:
        if r.kind != "exclusive":
            continue
        stack = ";".join((*(r.trace or ()), r.uid))
        totals[stack] = totals.get(stack, 0) + r.amount_us
    return "".join(f"{stack} {format_number(v)}\n" for stack, v in sorted(totals.items()))


def emit_flamegraph_folded(profile: Profile, out_path) -> Path:
    path = Path(out_path)
    path.write_text(folded_stacks(profile), encoding="utf-8")
    return path


def _group_key(group):
    # sizes sort numerically, then records without a size
    return (group is None or isinstance(group, str), group if group is not None else "")


def bars_csv(profile: Profile, group_by: str = "uid", kind: str = "exclusive") -> str:
    if group_by not in ("uid", "workload_size"):
        raise ValueError(f"group_by must be 'uid' or 'workload_size', not {group_by!r}")
    if not profile.resources:
        raise ValueError("profile has no resources")
    sums: dict[tuple, float] = {}
    for r in profile.resources:
        if r.kind != kind:
            continue
        group = r.uid if group_by == "uid" else profile.size_of(r)
        key = (group, r.uid)
        sums[key] = sums[key] + r.amount_us if key in sums else r.amount_us
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "uid", "amount_us"])
    for (group, uid), amount in sorted(sums.items(), key=lambda kv: (_group_key(kv[0][0]), kv[0][1])):
        w.writerow(["" if group is None else group, uid, format_number(amount)])
    return buf.getvalue()


def emit_bars(profile: Profile, group_by: str, out_path, kind: str = "exclusive") -> Path:
    path = Path(out_path)
    path.write_text(bars_csv(profile, group_by, kind), encoding="utf-8")
    return path
