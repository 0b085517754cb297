"""Minimal self-contained SVG line plots (byte-stable for identical input)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

WIDTH, HEIGHT = 640, 400
MARGIN = 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
DASHES = ("", "6,3", "2,2", "8,3,2,3")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _style(i: int) -> str:
    color = COLORS[i % len(COLORS)]
    dash = DASHES[(i // len(COLORS) + i) % len(DASHES)]
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'stroke="{color}"{extra}'


def render_svg(series: Sequence[tuple], log_y: bool = False, title: str = "") -> str:
    """``series`` holds ``(label, xs, ys)`` triples; nonpositive y is dropped on log axes."""
    pts = []
    for label, xs, ys in series:
        cleaned = [
            (float(x), math.log10(y) if log_y else float(y))
            for x, y in zip(xs, ys)
            if math.isfinite(x) and math.isfinite(y) and (y > 0 or not log_y)
        ]
        pts.append((str(label), cleaned))
    allx = [x for _, p in pts for x, _ in p]
    ally = [y for _, p in pts for _, y in p]
    x0, x1 = (min(allx), max(allx)) if allx else (0.0, 1.0)
    y0, y1 = (min(ally), max(ally)) if ally else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN)

    def sy(y):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 20}" font-size="11">{x0:.4g}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 20}" font-size="11" text-anchor="end">{x1:.4g}</text>',
        f'<text x="{MARGIN - 5}" y="{HEIGHT - MARGIN}" font-size="11" text-anchor="end">{("1e%.3g" % y0) if log_y else "%.4g" % y0}</text>',
        f'<text x="{MARGIN - 5}" y="{MARGIN + 4}" font-size="11" text-anchor="end">{("1e%.3g" % y1) if log_y else "%.4g" % y1}</text>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.0f}" y="20" font-size="14" text-anchor="middle">{_escape(title)}</text>')
    for i, (label, p) in enumerate(pts):
        if p:
            coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in p)
            out.append(f'<polyline fill="none" stroke-width="1.5" {_style(i)} points="{coords}"/>')
        ly = MARGIN + 14 * i
        out.append(f'<line x1="{WIDTH - MARGIN - 120}" y1="{ly}" x2="{WIDTH - MARGIN - 100}" y2="{ly}" stroke-width="1.5" {_style(i)}/>')
        out.append(f'<text x="{WIDTH - MARGIN - 95}" y="{ly + 4}" font-size="11">{_escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_svg(series: Sequence[tuple], path, log_y: bool = False, title: str = "") -> Path:
    path = Path(path)
    path.write_text(render_svg(series, log_y, title))
    return path
