"""Self-contained SVG output: histograms, curves, and small-multiple grids.

Figures are written directly as SVG text (bars, polylines, axis ticks) with
no external resources or font references, so they render in any browser and
diff cleanly.  Coordinates are formatted to fixed precision to keep output
byte-stable across runs.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 60, 15, 30, 45


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min(s for s in (mag, 2 * mag, 2.5 * mag, 5 * mag, 10 * mag) if s >= raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


class _Canvas:
    def __init__(self, xlim: tuple[float, float], ylim: tuple[float, float], title: str, xlabel: str, ylabel: str):
        self.xlim = xlim
        self.ylim = ylim
        self.parts: list[str] = []
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel

    def sx(self, x: float) -> float:
        lo, hi = self.xlim
        return _ML + (x - lo) / (hi - lo) * (_W - _ML - _MR)

    def sy(self, y: float) -> float:
        lo, hi = self.ylim
        return _H - _MB - (y - lo) / (hi - lo) * (_H - _MT - _MB)

    def rect(self, x0: float, x1: float, y0: float, y1: float, fill: str, opacity: float = 1.0) -> None:
        px, pw = self.sx(x0), max(self.sx(x1) - self.sx(x0), 0.0)
        py, ph = self.sy(y1), max(self.sy(y0) - self.sy(y1), 0.0)
        self.parts.append(
            f'<rect x="{_fmt(px)}" y="{_fmt(py)}" width="{_fmt(pw)}" height="{_fmt(ph)}" '
            f'fill="{fill}" fill-opacity="{_fmt(opacity)}"/>'
        )

    def polyline(self, xs, ys, stroke: str, width: float = 1.5, dash: str | None = None) -> None:
        pts = " ".join(f"{_fmt(self.sx(x))},{_fmt(self.sy(y))}" for x, y in zip(xs, ys))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{_fmt(width)}"{dash_attr}/>')

    def vline(self, x: float, stroke: str, dash: str = "4,3") -> None:
        self.polyline([x, x], [self.ylim[0], self.ylim[1]], stroke, width=1.0, dash=dash)

    def hline(self, y: float, stroke: str, dash: str = "4,3") -> None:
        self.polyline([self.xlim[0], self.xlim[1]], [y, y], stroke, width=1.0, dash=dash)

    def text(self, px: float, py: float, s: str, size: int = 11, anchor: str = "middle", color: str = "#333") -> None:
        self.parts.append(
            f'<text x="{_fmt(px)}" y="{_fmt(py)}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}" fill="{color}">{escape(s)}</text>'
        )

    def render(self) -> str:
        axes = [
            f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="#000" stroke-width="1"/>',
            f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="#000" stroke-width="1"/>',
        ]
        tick_parts = []
        for t in _ticks(*self.xlim):
            px = self.sx(t)
            tick_parts.append(f'<line x1="{_fmt(px)}" y1="{_H - _MB}" x2="{_fmt(px)}" y2="{_H - _MB + 4}" stroke="#000"/>')
            tick_parts.append(
                f'<text x="{_fmt(px)}" y="{_H - _MB + 16}" font-family="sans-serif" font-size="10" '
                f'text-anchor="middle" fill="#333">{_fmt(t)}</text>'
            )
        for t in _ticks(*self.ylim):
            py = self.sy(t)
            tick_parts.append(f'<line x1="{_ML - 4}" y1="{_fmt(py)}" x2="{_ML}" y2="{_fmt(py)}" stroke="#000"/>')
            tick_parts.append(
                f'<text x="{_ML - 7}" y="{_fmt(py + 3)}" font-family="sans-serif" font-size="10" '
                f'text-anchor="end" fill="#333">{_fmt(t)}</text>'
            )
        labels = [
            f'<text x="{(_ML + _W - _MR) / 2}" y="{_MT - 12}" font-family="sans-serif" font-size="13" '
            f'text-anchor="middle" fill="#000">{escape(self.title)}</text>',
            f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 10}" font-family="sans-serif" font-size="11" '
            f'text-anchor="middle" fill="#333">{escape(self.xlabel)}</text>',
            f'<text x="14" y="{(_MT + _H - _MB) / 2}" font-family="sans-serif" font-size="11" text-anchor="middle" '
            f'fill="#333" transform="rotate(-90 14 {(_MT + _H - _MB) / 2})">{escape(self.ylabel)}</text>',
        ]
        body = "\n".join(self.parts + axes + tick_parts + labels)
        return (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">\n'
            f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="#ffffff"/>\n'
            f"{body}\n</svg>\n"
        )


def histogram_svg(
    edges,
    counts,
    curve: tuple[list[float], list[float]] | None = None,
    vlines: tuple[float, ...] = (),
    title: str = "",
    xlabel: str = "singular value",
    ylabel: str = "density",
) -> str:
    """Density-normalized histogram bars with an optional overlay curve."""
    total = float(sum(counts))
    heights = []
    for i, c in enumerate(counts):
        width = edges[i + 1] - edges[i]
        heights.append(c / (total * width) if total > 0 and width > 0 else 0.0)
    ymax = max(heights + (list(curve[1]) if curve else [0.0]) + [1e-12]) * 1.1
    cv = _Canvas((float(edges[0]), float(edges[-1])), (0.0, ymax), title, xlabel, ylabel)
    for i, h in enumerate(heights):
        if h > 0:
            cv.rect(edges[i], edges[i + 1], 0.0, h, fill="#4878cf", opacity=0.75)
    for x in vlines:
        if cv.xlim[0] <= x <= cv.xlim[1]:
            cv.vline(x, "#555555")
    if curve:
        cv.polyline(curve[0], curve[1], stroke="#000000", width=1.5, dash="6,3")
    return cv.render()


def line_svg(
    series: list[tuple[list[float], list[float], str]],
    vspans: tuple[tuple[float, float], ...] = (),
    hline: float | None = None,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    ylim: tuple[float, float] | None = None,
) -> str:
    """Overlaid polylines with optional shaded x-spans and a reference hline."""
    palette = ("#4878cf", "#6acc65", "#d65f5f", "#b47cc7", "#c4ad66", "#77bedb")
    xs_all = [x for xs, _, _ in series for x in xs]
    ys_all = [y for _, ys, _ in series for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    xlim = (min(xs_all), max(xs_all) if max(xs_all) > min(xs_all) else min(xs_all) + 1.0)
    if ylim is None:
        lo, hi = min(ys_all + [0.0]), max(ys_all + [1e-12])
        ylim = (lo, hi + 0.1 * (hi - lo if hi > lo else 1.0))
    cv = _Canvas(xlim, ylim, title, xlabel, ylabel)
    for x0, x1 in vspans:
        cv.rect(max(x0, xlim[0]), min(x1, xlim[1]), ylim[0], ylim[1], fill="#f0c060", opacity=0.35)
    if hline is not None:
        cv.hline(hline, "#888888")
    for i, (xs, ys, label) in enumerate(series):
        color = palette[i % len(palette)]
        cv.polyline(xs, ys, stroke=color, width=1.6)
        if label:
            cv.text(_W - _MR - 5, _MT + 14 + 13 * i, label, size=10, anchor="end", color=color)
    return cv.render()


def bar_panel_grid_svg(
    panels: list[tuple[str, list[float], list[float]]],
    cols: int = 3,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """Grid of small bar charts; each panel is (name, xs, heights)."""
    cols = max(1, min(cols, len(panels) or 1))
    rows = math.ceil(len(panels) / cols) if panels else 1
    pw, ph = 230, 170
    width, height = cols * pw + 40, rows * ph + 50
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{escape(title)}</text>',
    ]
    gmax = max((max(h) for _, _, h in panels if h), default=1.0)
    gmin = min((min(h) for _, _, h in panels if h), default=0.0)
    lo, hi = min(gmin, 0.0), max(gmax, 1e-12)
    span = hi - lo if hi > lo else 1.0
    for idx, (name, xs, heights) in enumerate(panels):
        ox = 30 + (idx % cols) * pw
        oy = 35 + (idx // cols) * ph
        ih, iw = ph - 55, pw - 40
        parts.append(f'<text x="{ox + iw / 2}" y="{oy + 10}" font-family="sans-serif" font-size="11" text-anchor="middle">{escape(name)}</text>')
        base_y = oy + 18 + ih * (hi - 0.0) / span
        parts.append(f'<line x1="{ox}" y1="{_fmt(base_y)}" x2="{ox + iw}" y2="{_fmt(base_y)}" stroke="#000"/>')
        n = max(len(xs), 1)
        bw = iw / n * 0.8
        for j, h in enumerate(heights):
            cx = ox + iw * (j + 0.5) / n
            top = oy + 18 + ih * (hi - max(h, 0.0)) / span
            bot = oy + 18 + ih * (hi - min(h, 0.0)) / span
            parts.append(
                f'<rect x="{_fmt(cx - bw / 2)}" y="{_fmt(top)}" width="{_fmt(bw)}" height="{_fmt(max(bot - top, 0.5))}" fill="#4878cf"/>'
            )
            parts.append(
                f'<text x="{_fmt(cx)}" y="{oy + ph - 22}" font-family="sans-serif" font-size="8" text-anchor="middle" fill="#333">{_fmt(xs[j])}</text>'
            )
        parts.append(f'<text x="{_fmt(ox + 2)}" y="{oy + 26}" font-family="sans-serif" font-size="8" text-anchor="start" fill="#666">max {_fmt(hi)}</text>')
    parts.append(f'<text x="{width / 2}" y="{height - 8}" font-family="sans-serif" font-size="11" text-anchor="middle" fill="#333">{escape(xlabel)}</text>')
    parts.append(f'<text x="12" y="{height / 2}" font-family="sans-serif" font-size="11" text-anchor="middle" fill="#333" transform="rotate(-90 12 {height / 2})">{escape(ylabel)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
