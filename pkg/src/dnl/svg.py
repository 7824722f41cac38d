"""Minimal SVG line charts (axes, optional log scales, legend).

Charts are rebuilt from CSV files so a plot is always a pure function of the
table it accompanies.
"""

from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=80, right=170, top=40, bottom=60)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def _ticks(lo: float, hi: float, log: bool):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, (b - a) // 6)
        return [float(e) for e in range(a, b + 1, step)]
    if hi == lo:
        return [lo]
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-12 * abs(hi):
        out.append(v)
        v += step
    return out


def line_chart(series, *, title="", xlabel="", ylabel="", logx=False, logy=False) -> str:
    """``series`` is a list of ``(label, xs, ys)``; non-positive values are dropped on log axes."""
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    clean = []
    for label, xs, ys in series:
        pts = [(tx(x), ty(y)) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        clean.append((label, pts))
    allp = [p for _, pts in clean for p in pts] or [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x0 == x1:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y0 == y1:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>']
    left, top, bottom, right = MARGIN["left"], MARGIN["top"], MARGIN["top"] + ph, MARGIN["left"] + pw
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in _ticks(x0, x1, logx):
        if x0 - 1e-12 <= v <= x1 + 1e-12:
            X = px(v)
            lab = _fmt(10**v) if logx else _fmt(v)
            out.append(f'<line x1="{X:.1f}" y1="{bottom}" x2="{X:.1f}" y2="{bottom + 5}" stroke="black"/>')
            out.append(f'<text x="{X:.1f}" y="{bottom + 18}" text-anchor="middle">{lab}</text>')
    for v in _ticks(y0, y1, logy):
        if y0 - 1e-12 <= v <= y1 + 1e-12:
            Y = py(v)
            lab = _fmt(10**v) if logy else _fmt(v)
            out.append(f'<line x1="{left - 5}" y1="{Y:.1f}" x2="{left}" y2="{Y:.1f}" stroke="black"/>')
            out.append(f'<text x="{left - 8}" y="{Y + 4:.1f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">'
               f'{escape(xlabel)}{" (log)" if logx else ""}</text>')
    out.append(f'<text x="18" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {(top + bottom) / 2:.1f})">{escape(ylabel)}{" (log)" if logy else ""}</text>')
    for i, (label, pts) in enumerate(clean):
        color = COLORS[i % len(COLORS)]
        if pts:
            path = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            if len(pts) <= 40:
                for x, y in pts:
                    out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{color}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{right + 12}" y1="{ly - 4}" x2="{right + 32}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{right + 38}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def chart_from_csv(path, x: str, y: str, group: str | None = None, **kwargs) -> str:
    """Read a CSV written by the CLI and plot column ``y`` against ``x``, one line per ``group``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    series = {}
    for r in rows:
        key = r[group] if group else y
        xs, ys = series.setdefault(key, ([], []))
        xs.append(float(r[x]))
        ys.append(float(r[y]))
    return line_chart([(k, xs, ys) for k, (xs, ys) in series.items()], **kwargs)
