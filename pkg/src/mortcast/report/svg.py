"""Deterministic SVG heatmaps and line charts (no plotting library).

Numbers are printed with fixed precision so identical inputs give identical
bytes.
"""

from __future__ import annotations

from html import escape
from typing import Mapping, Sequence

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=60, right=90, top=36, bottom=44)
PURPLE = (94, 60, 153)
ORANGE = (230, 97, 1)
WHITE = (255, 255, 255)
PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def _hex(rgb) -> str:
    return "#{:02x}{:02x}{:02x}".format(*(int(round(c)) for c in rgb))


def _mix(a, b, t: float):
    return tuple(x + (y - x) * t for x, y in zip(a, b))


def diverging_color(value: float, vmin: float, vmax: float, center: float = 1.0) -> str:
    """Purple below ``center``, white at it, orange above; log-symmetric around the center."""
    if not np.isfinite(value):
        return "#cccccc"
    if value == center:
        return _hex(WHITE)
    lv = np.log(value / center)
    span = max(abs(np.log(vmin / center)), abs(np.log(vmax / center)), 1e-12)
    t = min(abs(lv) / span, 1.0)
    return _hex(_mix(WHITE, ORANGE if lv > 0 else PURPLE, t))


def sequential_color(value: float, vmin: float, vmax: float) -> str:
    if not np.isfinite(value) or value <= 0:
        return "#cccccc"
    t = 0.0 if vmax <= vmin else (np.log(value) - np.log(vmin)) / (np.log(vmax) - np.log(vmin))
    t = float(np.clip(t, 0.0, 1.0))
    # light yellow to dark red
    return _hex(_mix((255, 247, 188), (153, 0, 13), t))


def _f(v: float) -> str:
    return f"{v:.2f}"


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
    ]


def heatmap_svg(
    values: np.ndarray,
    rows: Sequence,
    cols: Sequence,
    title: str = "",
    diverging: bool = True,
    center: float = 1.0,
    row_label: str = "age",
    col_label: str = "year",
) -> str:
    """Heatmap of a ``(len(rows), len(cols))`` grid; row 0 is drawn at the bottom."""
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values) & (values > 0)]
    vmin = float(finite.min()) if finite.size else center
    vmax = float(finite.max()) if finite.size else center
    x0, y0 = MARGIN["left"], MARGIN["top"]
    w = WIDTH - MARGIN["left"] - MARGIN["right"]
    h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    cw, ch = w / len(cols), h / len(rows)
    out = _header(title)
    for i in range(len(rows)):
        y = y0 + h - (i + 1) * ch
        for j in range(len(cols)):
            v = values[i, j]
            color = diverging_color(v, vmin, vmax, center) if diverging else sequential_color(v, vmin, vmax)
            out.append(
                f'<rect x="{_f(x0 + j * cw)}" y="{_f(y)}" width="{_f(cw + 0.05)}" height="{_f(ch + 0.05)}" fill="{color}"/>'
            )
    # axis ticks: first, middle, last
    for j in sorted({0, len(cols) // 2, len(cols) - 1}):
        out.append(
            f'<text x="{_f(x0 + (j + 0.5) * cw)}" y="{_f(y0 + h + 16)}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{escape(str(cols[j]))}</text>'
        )
    for i in sorted({0, len(rows) // 2, len(rows) - 1}):
        out.append(
            f'<text x="{_f(x0 - 6)}" y="{_f(y0 + h - (i + 0.5) * ch + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{escape(str(rows[i]))}</text>'
        )
    out.append(
        f'<text x="{_f(x0 + w / 2)}" y="{HEIGHT - 8}" text-anchor="middle" font-family="sans-serif" font-size="12">{col_label}</text>'
    )
    out.append(
        f'<text x="14" y="{_f(y0 + h / 2)}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {_f(y0 + h / 2)})">{row_label}</text>'
    )
    # colour bar
    bx = WIDTH - MARGIN["right"] + 20
    steps = 20
    for k in range(steps):
        t = k / (steps - 1)
        v = float(np.exp(np.log(vmin) + t * (np.log(vmax) - np.log(vmin)))) if vmax > vmin else vmin
        color = diverging_color(v, vmin, vmax, center) if diverging else sequential_color(v, vmin, vmax)
        out.append(f'<rect x="{bx}" y="{_f(y0 + h - (k + 1) * h / steps)}" width="14" height="{_f(h / steps + 0.05)}" fill="{color}"/>')
    for v, y in ((vmin, y0 + h), (vmax, y0)):
        out.append(f'<text x="{bx + 18}" y="{_f(y + 4)}" font-family="sans-serif" font-size="10">{v:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_chart_svg(
    series: Mapping[str, tuple[Sequence, Sequence]],
    title: str = "",
    reference: float | None = 1.0,
    x_label: str = "",
    y_label: str = "",
    markers: Mapping[str, float] | None = None,
) -> str:
    """Lines for each ``name -> (x, y)``; optional horizontal reference line."""
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()]) if series else np.zeros(1)
    if reference is not None:
        ys = np.append(ys, reference)
    xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
    xmin, xmax = float(xs.min()), float(xs.max())
    ymin, ymax = float(ys.min()), float(ys.max())
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax == ymin:
        pad = max(abs(ymin) * 0.05, 1e-3)
        ymin, ymax = ymin - pad, ymax + pad
    x0, y0 = MARGIN["left"], MARGIN["top"]
    w = WIDTH - MARGIN["left"] - MARGIN["right"]
    h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return x0 + (x - xmin) / (xmax - xmin) * w

    def py(y):
        return y0 + h - (y - ymin) / (ymax - ymin) * h

    out = _header(title)
    out.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#999999"/>')
    if reference is not None:
        out.append(
            f'<line x1="{_f(x0)}" y1="{_f(py(reference))}" x2="{_f(x0 + w)}" y2="{_f(py(reference))}" '
            'stroke="#444444" stroke-dasharray="4 3"/>'
        )
    for label, xv in (markers or {}).items():
        out.append(f'<line x1="{_f(px(xv))}" y1="{y0}" x2="{_f(px(xv))}" y2="{y0 + h}" stroke="#bbbbbb"/>')
    for k, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_f(px(a))},{_f(py(b))}" for a, b in zip(np.asarray(x, float), np.asarray(y, float)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        out.append(
            f'<text x="{WIDTH - MARGIN["right"] + 6}" y="{y0 + 14 * (k + 1)}" font-family="sans-serif" '
            f'font-size="10" fill="{color}">{escape(name)}</text>'
        )
    for v in (ymin, ymax):
        out.append(f'<text x="{x0 - 6}" y="{_f(py(v) + 4)}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.4g}</text>')
    for v in (xmin, xmax):
        out.append(f'<text x="{_f(px(v))}" y="{_f(y0 + h + 16)}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:g}</text>')
    out.append(f'<text x="{_f(x0 + w / 2)}" y="{HEIGHT - 8}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(x_label)}</text>')
    if y_label:
        out.append(
            f'<text x="14" y="{_f(y0 + h / 2)}" text-anchor="middle" font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 14 {_f(y0 + h / 2)})">{escape(y_label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
