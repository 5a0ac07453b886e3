"""Minimal, dependency-free SVG charts.

Charts are pure functions of the numbers passed in (normally read back from
the CSV files), so the SVG never carries information the CSV does not.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _range(values):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Frame:
    def __init__(self, xs, ys):
        self.x0, self.x1 = _range(xs)
        self.y0, self.y1 = _range(ys)

    def px(self, x):
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y):
        return HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _axes(frame, title, xlabel, ylabel):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="18" y="{HEIGHT / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {HEIGHT / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in np.linspace(frame.x0, frame.x1, 5):
        out.append(f'<text x="{frame.px(t):.1f}" y="{HEIGHT - MARGIN + 16}" '
                   f'text-anchor="middle">{t:.3g}</text>')
    for t in np.linspace(frame.y0, frame.y1, 5):
        out.append(f'<text x="{MARGIN - 6}" y="{frame.py(t) + 4:.1f}" '
                   f'text-anchor="end">{t:.3g}</text>')
    return out


def scatter_svg(xs, ys, title="", xlabel="x", ylabel="y", labels=None) -> str:
    """Scatter plot; ``labels`` optionally annotates each point."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size == 0:
        xs = ys = np.zeros(1)
        labels = None
    frame = _Frame(xs, ys)
    out = _axes(frame, title, xlabel, ylabel)
    for i, (x, y) in enumerate(zip(xs, ys)):
        out.append(f'<circle cx="{frame.px(x):.2f}" cy="{frame.py(y):.2f}" r="4" '
                   f'fill="{PALETTE[0]}"/>')
        if labels is not None:
            out.append(f'<text x="{frame.px(x) + 6:.2f}" y="{frame.py(y) - 6:.2f}" '
                       f'font-size="10">{escape(str(labels[i]))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_svg(series: dict, title="", xlabel="step", ylabel="episode return") -> str:
    """Line chart with one polyline per ``name -> (xs, ys)`` entry."""
    all_x = np.concatenate([np.asarray(v[0], float) for v in series.values()] or [np.zeros(1)])
    all_y = np.concatenate([np.asarray(v[1], float) for v in series.values()] or [np.zeros(1)])
    if all_x.size == 0:
        all_x = all_y = np.zeros(1)
    frame = _Frame(all_x, all_y)
    out = _axes(frame, title, xlabel, ylabel)
    for k, (name, (xs, ys)) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{frame.px(x):.2f},{frame.py(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        out.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * k}" fill="{colour}" '
                   f'font-size="10">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
