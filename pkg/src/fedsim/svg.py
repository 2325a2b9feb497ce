"""Minimal SVG line charts written by hand (no plotting library)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 960, 540
PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


@dataclass(frozen=True)
class Series:
    name: str
    xs: Sequence[float]
    ys: Sequence[float]


def nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(count, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.4g}"


class Panel:
    """One set of axes inside the canvas, in pixel coordinates."""

    def __init__(self, x: float, y: float, w: float, h: float, title: str,
                 xlabel: str, ylabel: str, series: Sequence[Series]):
        self.x, self.y, self.w, self.h = x, y, w, h
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.series = series
        xs = [v for s in series for v in s.xs if math.isfinite(v)]
        ys = [v for s in series for v in s.ys if math.isfinite(v)]
        self.xlo, self.xhi = (min(xs), max(xs)) if xs else (0.0, 1.0)
        self.ylo, self.yhi = (min(ys), max(ys)) if ys else (0.0, 1.0)
        if self.xhi == self.xlo:
            self.xhi = self.xlo + 1.0
        if self.yhi == self.ylo:
            self.ylo, self.yhi = self.ylo - 0.5, self.yhi + 0.5
        pad = 0.05 * (self.yhi - self.ylo)
        self.ylo -= pad
        self.yhi += pad

    def px(self, v: float) -> float:
        return self.x + (v - self.xlo) / (self.xhi - self.xlo) * self.w

    def py(self, v: float) -> float:
        return self.y + self.h - (v - self.ylo) / (self.yhi - self.ylo) * self.h

    def render(self, panel_id: str) -> list[str]:
        out = [f'<g class="panel" data-panel="{panel_id}">',
               f'<rect x="{self.x:.1f}" y="{self.y:.1f}" width="{self.w:.1f}" '
               f'height="{self.h:.1f}" fill="none" stroke="#333"/>',
               f'<text x="{self.x + self.w / 2:.1f}" y="{self.y - 10:.1f}" '
               f'text-anchor="middle" font-size="15">{escape(self.title)}</text>']
        for t in nice_ticks(self.xlo, self.xhi, 6):
            if self.xlo <= t <= self.xhi:
                X = self.px(t)
                out.append(f'<line class="tick" x1="{X:.1f}" y1="{self.y + self.h:.1f}" '
                           f'x2="{X:.1f}" y2="{self.y + self.h + 5:.1f}" stroke="#333"/>')
                out.append(f'<text x="{X:.1f}" y="{self.y + self.h + 18:.1f}" '
                           f'text-anchor="middle" font-size="11">{_fmt(t)}</text>')
        for t in nice_ticks(self.ylo, self.yhi, 5):
            if self.ylo <= t <= self.yhi:
                Y = self.py(t)
                out.append(f'<line class="tick" x1="{self.x - 5:.1f}" y1="{Y:.1f}" '
                           f'x2="{self.x:.1f}" y2="{Y:.1f}" stroke="#333"/>')
                out.append(f'<line x1="{self.x:.1f}" y1="{Y:.1f}" x2="{self.x + self.w:.1f}" '
                           f'y2="{Y:.1f}" stroke="#ddd" stroke-width="0.5"/>')
                out.append(f'<text x="{self.x - 8:.1f}" y="{Y + 4:.1f}" '
                           f'text-anchor="end" font-size="11">{_fmt(t)}</text>')
        out.append(f'<text x="{self.x + self.w / 2:.1f}" y="{self.y + self.h + 36:.1f}" '
                   f'text-anchor="middle" font-size="12">{escape(self.xlabel)}</text>')
        cy = self.y + self.h / 2
        out.append(f'<text x="{self.x - 48:.1f}" y="{cy:.1f}" text-anchor="middle" font-size="12" '
                   f'transform="rotate(-90 {self.x - 48:.1f} {cy:.1f})">{escape(self.ylabel)}</text>')
        for i, s in enumerate(self.series):
            pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(s.xs, s.ys)
                           if math.isfinite(x) and math.isfinite(y))
            out.append(f'<polyline class="series" data-series="{escape(s.name, {chr(34): "&quot;"})}" '
                       f'fill="none" stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.8" '
                       f'points="{pts}"/>')
        out.append("</g>")
        return out


def line_chart_svg(panels: Sequence[tuple[str, str, str, str, Sequence[Series]]],
                   title: str = "") -> str:
    """Side-by-side panels sharing one legend.

    ``panels`` holds ``(panel_id, title, xlabel, ylabel, series)`` tuples;
    every panel is expected to list the same series names in the same order.
    """
    legend_h = 22
    names = [s.name for s in panels[0][4]] if panels else []
    legend_rows = math.ceil(len(names) / 4) if names else 0
    top = 60 + (18 if title else 0)
    bottom = 60 + legend_rows * legend_h
    gap = 90
    pw = (WIDTH - 80 - 30 - gap * (len(panels) - 1)) / max(len(panels), 1)
    ph = HEIGHT - top - bottom
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="17">'
                   f'{escape(title)}</text>')
    for i, (pid, ptitle, xl, yl, series) in enumerate(panels):
        out += Panel(80 + i * (pw + gap), top, pw, ph, ptitle, xl, yl, series).render(pid)
    out.append('<g class="legend">')
    y0 = HEIGHT - legend_rows * legend_h - 6
    for i, name in enumerate(names):
        lx = 80 + (i % 4) * 215
        ly = y0 + (i // 4) * legend_h
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text class="legend-entry" x="{lx + 30}" y="{ly + 4}" font-size="12">'
                   f'{escape(name)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
