"""Standalone SVG line charts for the CSV files the CLI writes."""

from __future__ import annotations

import csv
import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .exceptions import FormatError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=50)


def read_columns(path) -> Dict[str, List[float]]:
    """Numeric columns of a headed CSV; non-numeric columns are dropped."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise FormatError(f"{path}: need a header and at least one data row")
    header, body = rows[0], [r for r in rows[1:] if r]
    cols: Dict[str, List[float]] = {}
    for i, name in enumerate(header):
        try:
            cols[name] = [float(r[i]) for r in body]
        except (ValueError, IndexError):
            continue
    if not cols:
        raise FormatError(f"{path}: no numeric columns")
    return cols


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * abs(step):
        out.append(round(v, 12))
        v += step
    return out


def line_chart(
    x: Sequence[float],
    series: Dict[str, Sequence[float]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """Render ``series`` against ``x`` and return the SVG document text."""
    finite = [v for ys in series.values() for v in ys if math.isfinite(v)]
    if not x or not finite:
        raise ValueError("nothing to plot")
    x0, x1 = min(x), max(x)
    y0, y1 = min(finite), max(finite)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1 - (v - y0) / (y1 - y0)) * ph

    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(WIDTH),
        height=str(HEIGHT),
        viewBox=f"0 0 {WIDTH} {HEIGHT}",
    )
    ET.SubElement(svg, "rect", x="0", y="0", width=str(WIDTH), height=str(HEIGHT), fill="white")
    font = {"font-family": "sans-serif", "font-size": "12"}
    ET.SubElement(svg, "rect", x=str(MARGIN["left"]), y=str(MARGIN["top"]), width=str(pw), height=str(ph),
                  fill="none", stroke="#444")
    for v in _ticks(x0, x1):
        ET.SubElement(svg, "text", x=f"{sx(v):.1f}", y=str(HEIGHT - MARGIN["bottom"] + 16),
                      **{"text-anchor": "middle"}, **font).text = f"{v:g}"
    for v in _ticks(y0, y1):
        ET.SubElement(svg, "line", x1=str(MARGIN["left"]), x2=str(MARGIN["left"] + pw), y1=f"{sy(v):.1f}",
                      y2=f"{sy(v):.1f}", stroke="#ddd")
        ET.SubElement(svg, "text", x=str(MARGIN["left"] - 6), y=f"{sy(v) + 4:.1f}",
                      **{"text-anchor": "end"}, **font).text = f"{v:g}"
    if title:
        ET.SubElement(svg, "text", x=str(WIDTH // 2), y="24", **{"text-anchor": "middle"}, **font).text = title
    if xlabel:
        ET.SubElement(svg, "text", x=str(MARGIN["left"] + pw // 2), y=str(HEIGHT - 10),
                      **{"text-anchor": "middle"}, **font).text = xlabel
    if ylabel:
        ET.SubElement(svg, "text", x="16", y=str(MARGIN["top"] + ph // 2),
                      transform=f"rotate(-90 16 {MARGIN['top'] + ph // 2})",
                      **{"text-anchor": "middle"}, **font).text = ylabel
    for i, (name, ys) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, ys) if math.isfinite(b))
        ET.SubElement(svg, "polyline", points=pts, fill="none", stroke=color, **{"stroke-width": "1.5"})
        ly = MARGIN["top"] + 14 + 18 * i
        lx = WIDTH - MARGIN["right"] + 10
        ET.SubElement(svg, "line", x1=str(lx), x2=str(lx + 18), y1=str(ly), y2=str(ly), stroke=color,
                      **{"stroke-width": "2"})
        ET.SubElement(svg, "text", x=str(lx + 24), y=str(ly + 4), **font).text = name
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"


def plot_csv(path, out, x: Optional[str] = None, y: Optional[Sequence[str]] = None, title: str = "") -> Path:
    """Plot columns ``y`` (default: all others) of a CSV against column ``x`` (default: first)."""
    cols = read_columns(path)
    names = list(cols)
    x = x or names[0]
    if x not in cols:
        raise FormatError(f"{path}: no numeric column {x!r}")
    y = list(y) if y else [n for n in names if n != x]
    missing = [n for n in y if n not in cols]
    if missing:
        raise FormatError(f"{path}: no numeric column(s) {missing}")
    out = Path(out)
    out.write_text(line_chart(cols[x], {n: cols[n] for n in y}, title=title or Path(path).stem, xlabel=x))
    return out
