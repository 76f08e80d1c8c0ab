"""Minimal SVG line plots with optional shaded bands.

The plotted data are embedded verbatim as JSON in a ``<metadata>`` element so
a figure can be read back with :func:`read_metadata`.
"""

from __future__ import annotations

import json
import math
import re
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = (70, 20, 40, 55)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_plot(series: list[dict], *, title: str = "", xlabel: str = "", ylabel: str = "", meta: dict | None = None) -> str:
    """Render series ``{"name", "x", "y", optional "band"}`` as an SVG document.

    ``band`` is a vector of half-widths drawn as a shaded region around y.
    """
    xs = np.concatenate([np.asarray(s["x"], dtype=float) for s in series]) if series else np.zeros(1)
    ys = []
    for s in series:
        y = np.asarray(s["y"], dtype=float)
        b = np.asarray(s.get("band", np.zeros_like(y)), dtype=float)
        ys += [y - b, y + b]
    ys = np.concatenate(ys) if ys else np.zeros(1)
    xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
    x0, x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    L, R, T, B = MARGIN
    pw, ph = WIDTH - L - R, HEIGHT - T - B

    def px(v):
        return L + (v - x0) / (x1 - x0) * pw

    def py(v):
        return T + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    data = {
        "title": title,
        "xlabel": xlabel,
        "ylabel": ylabel,
        "series": [
            {
                "name": s.get("name", ""),
                "x": [float(v) for v in s["x"]],
                "y": [float(v) for v in s["y"]],
                **({"band": [float(v) for v in s["band"]]} if "band" in s else {}),
            }
            for s in series
        ],
    }
    if meta:
        data["meta"] = meta
    out.append("<metadata><![CDATA[" + json.dumps(data, sort_keys=True) + "]]></metadata>")
    out.append(f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{px(v):.2f}" y1="{T + ph}" x2="{px(v):.2f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(v):.2f}" y="{T + ph + 18}" font-size="11" text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{L - 5}" y1="{py(v):.2f}" x2="{L}" y2="{py(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{py(v) + 4:.2f}" font-size="11" text-anchor="end">{_fmt(v)}</text>')
    for i, s in enumerate(series):
        color = COLORS[i % len(COLORS)]
        x = np.asarray(s["x"], dtype=float)
        y = np.asarray(s["y"], dtype=float)
        if "band" in s:
            b = np.asarray(s["band"], dtype=float)
            upper = [f"{px(a):.2f},{py(c):.2f}" for a, c in zip(x, y + b)]
            lower = [f"{px(a):.2f},{py(c):.2f}" for a, c in zip(x[::-1], (y - b)[::-1])]
            out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(a):.2f},{py(c):.2f}" for a, c in zip(x, y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(
            f'<text x="{L + 10}" y="{T + 16 + 14 * i}" font-size="12" fill="{color}">{escape(s.get("name", ""))}</text>'
        )
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="{T - 12}" font-size="14" text-anchor="middle">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{L + pw / 2}" y="{HEIGHT - 10}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(
            f'<text x="15" y="{T + ph / 2}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 15 {T + ph / 2})">{escape(ylabel)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_metadata(svg: str) -> dict:
    """Data block embedded by :func:`line_plot`."""
    m = re.search(r"<metadata><!\[CDATA\[(.*?)\]\]></metadata>", svg, re.S)
    if m is None:
        raise ValueError("no metadata block")
    return json.loads(m.group(1))
