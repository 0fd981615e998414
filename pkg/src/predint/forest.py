"""Forest plots rendered directly as SVG 1.1 text.

Output is a pure function of the inputs (no timestamps, ids or font
metrics), so identical inputs give identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .intervals import IntervalResult
from .model import StudySet

Z95 = 1.959963984540054

WIDTH = 720
ROW = 22
LABEL_X = 12
PLOT_X0 = 250
PLOT_X1 = 500
TEXT_X = 515
TOP = 40
FONT = 12


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(1, target)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    x = start
    while x <= hi + 1e-9 * step:
        ticks.append(round(x, 12) + 0.0)
        x += step
    return ticks


def _fmt(x: float, digits: int) -> str:
    s = f"{x:.{digits}f}"
    return s[1:] if s.startswith("-") and float(s) == 0 else s


def _f(x: float) -> str:
    return f"{x:.2f}"


def forest_svg(s: StudySet, r: IntervalResult, path=None, digits: int = 2, title: str | None = None) -> str:
    """Draw studies (estimate +/- 1.96 se), the CI diamond and the PI bar.

    Writes to ``path`` when given and always returns the SVG text.
    """
    labels = s.display_labels()
    lo_k = s.y - Z95 * s.sigma
    hi_k = s.y + Z95 * s.sigma
    has_pi = r.lpi is not None
    extent = [lo_k.min(), hi_k.max(), r.lci, r.uci]
    if has_pi:
        extent += [r.lpi, r.upi]
    lo, hi = float(min(extent)), float(max(extent))
    pad = 0.05 * (hi - lo or 1.0)
    ticks = nice_ticks(lo - pad, hi + pad)
    xmin, xmax = min(ticks[0], lo - pad), max(ticks[-1], hi + pad)

    def sx(x: float) -> float:
        return PLOT_X0 + (x - xmin) / (xmax - xmin) * (PLOT_X1 - PLOT_X0)

    n_rows = s.k + 1 + 1 + (1 if has_pi else 0)
    height = TOP + ROW * (n_rows + 1) + 40
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="Arial, Helvetica, sans-serif" font-size="{FONT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{LABEL_X}" y="18" font-weight="bold">{escape(title)}</text>')
    level = f"{100 * (1 - r.alpha):g}"
    head_y = TOP - 8
    out.append(f'<text x="{LABEL_X}" y="{head_y}" font-weight="bold">Study</text>')
    out.append(f'<text x="{TEXT_X}" y="{head_y}" font-weight="bold">Estimate [{level}% CI]</text>')

    w = 1.0 / s.variances
    size = 3.0 + 5.0 * np.sqrt(w / w.max())
    for i in range(s.k):
        cy = TOP + ROW * i + ROW / 2
        y0, y1 = float(lo_k[i]), float(hi_k[i])
        half = float(size[i])
        out.append(f'<text x="{LABEL_X}" y="{_f(cy + 4)}">{escape(labels[i])}</text>')
        out.append(
            f'<line x1="{_f(sx(y0))}" y1="{_f(cy)}" x2="{_f(sx(y1))}" y2="{_f(cy)}" stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<rect x="{_f(sx(s.y[i]) - half / 2)}" y="{_f(cy - half / 2)}" width="{_f(half)}" '
            f'height="{_f(half)}" fill="black"/>'
        )
        out.append(
            f'<text x="{TEXT_X}" y="{_f(cy + 4)}">{_fmt(s.y[i], digits)} '
            f'[{_fmt(y0, digits)}, {_fmt(y1, digits)}]</text>'
        )

    row = s.k + 1
    cy = TOP + ROW * row + ROW / 2
    xl, xc, xr = sx(r.lci), sx(r.muhat), sx(r.uci)
    out.append(f'<text x="{LABEL_X}" y="{_f(cy + 4)}" font-weight="bold">Average effect ({level}% CI)</text>')
    out.append(
        f'<polygon points="{_f(xl)},{_f(cy)} {_f(xc)},{_f(cy - 7)} {_f(xr)},{_f(cy)} {_f(xc)},{_f(cy + 7)}" '
        'fill="black"/>'
    )
    out.append(
        f'<text x="{TEXT_X}" y="{_f(cy + 4)}" font-weight="bold">{_fmt(r.muhat, digits)} '
        f'[{_fmt(r.lci, digits)}, {_fmt(r.uci, digits)}]</text>'
    )
    if has_pi:
        row += 1
        cy = TOP + ROW * row + ROW / 2
        xl, xr = sx(r.lpi), sx(r.upi)
        out.append(f'<text x="{LABEL_X}" y="{_f(cy + 4)}" font-weight="bold">{level}% prediction interval</text>')
        out.append(
            f'<rect x="{_f(xl)}" y="{_f(cy - 3)}" width="{_f(xr - xl)}" height="6" fill="#888888" stroke="black" '
            'stroke-width="0.5"/>'
        )
        out.append(
            f'<text x="{TEXT_X}" y="{_f(cy + 4)}">[{_fmt(r.lpi, digits)}, {_fmt(r.upi, digits)}]</text>'
        )

    axis_y = TOP + ROW * (row + 1) + 4
    out.append(
        f'<line x1="{_f(sx(xmin))}" y1="{_f(axis_y)}" x2="{_f(sx(xmax))}" y2="{_f(axis_y)}" stroke="black"/>'
    )
    for t in ticks:
        x = sx(t)
        out.append(f'<line x1="{_f(x)}" y1="{_f(axis_y)}" x2="{_f(x)}" y2="{_f(axis_y + 5)}" stroke="black"/>')
        out.append(f'<text x="{_f(x)}" y="{_f(axis_y + 18)}" text-anchor="middle">{_fmt(t, digits)}</text>')
    if xmin <= 0 <= xmax:
        x = sx(0.0)
        out.append(
            f'<line x1="{_f(x)}" y1="{TOP - 4}" x2="{_f(x)}" y2="{_f(axis_y)}" stroke="#555555" '
            'stroke-dasharray="3,3"/>'
        )
    xc = sx(r.muhat)
    out.append(
        f'<line x1="{_f(xc)}" y1="{TOP - 4}" x2="{_f(xc)}" y2="{_f(axis_y)}" stroke="#999999" stroke-dasharray="1,2"/>'
    )
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
