"""Minimal SVG line charts for experiment logs."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
WIDTH, HEIGHT = 720, 360
MARGIN = dict(left=70, right=20, top=36, bottom=48)


def _bounds(values):
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_chart(path, x, series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> None:
    """Write ``series`` (name -> y values sharing ``x``) as an SVG polyline chart."""
    x = [float(v) for v in x]
    ys = {k: [float(v) for v in vals] for k, vals in series.items()}
    x0, x1 = _bounds(x)
    y0, y1 = _bounds([v for vals in ys.values() for v in vals])
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{escape(title)}</text>',
        f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12" font-family="sans-serif">{escape(xlabel)}</text>',
        f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{sx(fx):.1f}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle" font-size="10" '
                   f'font-family="sans-serif">{fx:.4g}</text>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(fy) + 3:.1f}" text-anchor="end" font-size="10" '
                   f'font-family="sans-serif">{fy:.4g}</text>')
    for i, (name, vals) in enumerate(ys.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, vals) if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = MARGIN["top"] + 14 + 14 * i
        out.append(f'<text x="{MARGIN["left"] + pw - 6}" y="{ly}" text-anchor="end" font-size="11" '
                   f'font-family="sans-serif" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
