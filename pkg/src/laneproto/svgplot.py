"""Minimal dependency-free SVG line and bar charts for the evaluation figures."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=60, right=20, top=36, bottom=48)


def _nice_max(v: float) -> float:
    if not v > 0 or not math.isfinite(v):
        return 1.0
    mag = 10 ** math.floor(math.log10(v))
    for step in (1, 2, 2.5, 5, 10):
        if step * mag >= v:
            return step * mag
    return 10 * mag


def _frame(title: str, xlabel: str, ylabel: str, x_max: float, y_max: float, x_ticks, n_y: int = 5):
    l, r, t, b = MARGIN["left"], MARGIN["right"], MARGIN["top"], MARGIN["bottom"]
    pw, ph = WIDTH - l - r, HEIGHT - t - b
    sx = lambda x: l + pw * x / x_max
    sy = lambda y: t + ph * (1 - y / y_max)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{l}" y1="{t + ph}" x2="{l + pw}" y2="{t + ph}" stroke="black"/>',
           f'<line x1="{l}" y1="{t}" x2="{l}" y2="{t + ph}" stroke="black"/>']
    for i in range(n_y + 1):
        y = y_max * i / n_y
        out.append(f'<line x1="{l - 4}" y1="{sy(y):.1f}" x2="{l + pw}" y2="{sy(y):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{l - 6}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.3g}</text>')
    for x, lab in x_ticks:
        out.append(f'<text x="{sx(x):.1f}" y="{t + ph + 16}" text-anchor="middle">{escape(str(lab))}</text>')
    out.append(f'<text x="{l + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{t + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {t + ph / 2:.1f})">{escape(ylabel)}</text>')
    return out, sx, sy


def _legend(out, names):
    x0, y0 = WIDTH - MARGIN["right"] - 150, MARGIN["top"] + 6
    for i, name in enumerate(names):
        c = PALETTE[i % len(PALETTE)]
        y = y0 + 14 * i
        out.append(f'<rect x="{x0}" y="{y - 8}" width="10" height="10" fill="{c}"/>')
        out.append(f'<text x="{x0 + 14}" y="{y + 1}">{escape(name)}</text>')


def line_chart(title: str, x, series: dict, xlabel: str = "", ylabel: str = "") -> str:
    """Polyline per series; ``None`` values break the line."""
    ys = [v for vals in series.values() for v in vals if v is not None]
    x_max = max(x) + (x[1] - x[0]) / 2 if len(x) > 1 else 1.0
    y_max = _nice_max(max(ys) if ys else 1.0)
    ticks = [(v, f"{v:g}") for v in x]
    out, sx, sy = _frame(title, xlabel, ylabel, x_max, y_max, ticks)
    for i, (name, vals) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        seg: list[str] = []
        for xv, yv in list(zip(x, vals)) + [(None, None)]:
            if yv is None:
                if len(seg) > 1:
                    out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{" ".join(seg)}"/>')
                seg = []
                continue
            seg.append(f"{sx(xv):.1f},{sy(yv):.1f}")
            out.append(f'<circle cx="{sx(xv):.1f}" cy="{sy(yv):.1f}" r="2.5" fill="{c}"/>')
    _legend(out, list(series))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(title: str, categories, series: dict, ylabel: str = "") -> str:
    """Grouped bars: one group per category, one bar per series."""
    ys = [v for vals in series.values() for v in vals if v is not None]
    y_max = _nice_max(max(ys) if ys else 1.0)
    n_cat, n_ser = len(categories), max(len(series), 1)
    ticks = [(i + 0.5, c) for i, c in enumerate(categories)]
    out, sx, sy = _frame(title, "", ylabel, float(n_cat), y_max, ticks)
    width = 0.8 / n_ser
    for j, (name, vals) in enumerate(series.items()):
        c = PALETTE[j % len(PALETTE)]
        for i, v in enumerate(vals):
            if v is None:
                continue
            x0, x1 = sx(i + 0.1 + j * width), sx(i + 0.1 + (j + 1) * width)
            out.append(f'<rect x="{x0:.1f}" y="{sy(v):.1f}" width="{x1 - x0:.1f}" '
                       f'height="{sy(0) - sy(v):.1f}" fill="{c}"/>')
    _legend(out, list(series))
    out.append("</svg>")
    return "\n".join(out) + "\n"
