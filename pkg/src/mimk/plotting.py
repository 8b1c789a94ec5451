"""Minimal SVG line plots for metrics — no plotting dependency.

Axes are linear and auto-scaled with a 5% margin; a constant series gets a
±1 padded range so it renders as a horizontal mid-plot line.  Output is
built with ElementTree, so it is well-formed XML by construction and
byte-stable for identical inputs.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

from .errors import ContractError

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62, 16, 16, 42
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return "%.6g" % v


def _axis_range(lo: float, hi: float) -> tuple[float, float]:
    if hi == lo:
        return lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def emit_plot(rows: list, columns: list[str], path, x_field: str = "epoch",
              title: str = "") -> None:
    """Write one polyline per column; rows are any objects with attributes."""
    if len(rows) < 2:
        raise ContractError(f"plot needs at least 2 rows, got {len(rows)}")
    if not columns:
        raise ContractError("plot needs at least one column")
    xs = [float(getattr(r, x_field)) for r in rows]
    series = {c: [float(getattr(r, c)) for r in rows] for c in columns}
    x0, x1 = _axis_range(min(xs), max(xs))
    all_y = [v for ys in series.values() for v in ys]
    y0, y1 = _axis_range(min(all_y), max(all_y))

    def sx(x: float) -> float:
        return MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R)

    def sy(y: float) -> float:
        return HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (
            HEIGHT - MARGIN_T - MARGIN_B)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(WIDTH), height=str(HEIGHT),
                     viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(WIDTH),
                  height=str(HEIGHT), fill="white")
    # axes
    axis_style = {"stroke": "black", "stroke-width": "1"}
    ET.SubElement(svg, "line", x1=_fmt(MARGIN_L), y1=_fmt(HEIGHT - MARGIN_B),
                  x2=_fmt(WIDTH - MARGIN_R), y2=_fmt(HEIGHT - MARGIN_B),
                  **axis_style)
    ET.SubElement(svg, "line", x1=_fmt(MARGIN_L), y1=_fmt(MARGIN_T),
                  x2=_fmt(MARGIN_L), y2=_fmt(HEIGHT - MARGIN_B), **axis_style)
    # axis end labels
    for x, anchor in ((x0, "start"), (x1, "end")):
        t = ET.SubElement(svg, "text", x=_fmt(sx(x)),
                          y=_fmt(HEIGHT - MARGIN_B + 16),
                          **{"font-size": "11", "text-anchor": anchor})
        t.text = _fmt(x)
    for y in (y0, y1):
        t = ET.SubElement(svg, "text", x=_fmt(MARGIN_L - 6), y=_fmt(sy(y) + 4),
                          **{"font-size": "11", "text-anchor": "end"})
        t.text = _fmt(y)
    xlabel = ET.SubElement(svg, "text", x=_fmt((MARGIN_L + WIDTH - MARGIN_R) / 2),
                           y=_fmt(HEIGHT - 8),
                           **{"font-size": "12", "text-anchor": "middle"})
    xlabel.text = x_field
    if title:
        tt = ET.SubElement(svg, "text", x=_fmt(WIDTH / 2), y=_fmt(MARGIN_T),
                           **{"font-size": "13", "text-anchor": "middle"})
        tt.text = title
    # series + legend
    for i, col in enumerate(columns):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}"
                       for x, y in zip(xs, series[col]))
        ET.SubElement(svg, "polyline", points=pts, fill="none", stroke=color,
                      **{"stroke-width": "1.5"})
        ly = MARGIN_T + 14 + 16 * i
        ET.SubElement(svg, "line", x1=_fmt(WIDTH - MARGIN_R - 130), y1=_fmt(ly),
                      x2=_fmt(WIDTH - MARGIN_R - 108), y2=_fmt(ly),
                      stroke=color, **{"stroke-width": "1.5"})
        lt = ET.SubElement(svg, "text", x=_fmt(WIDTH - MARGIN_R - 102),
                           y=_fmt(ly + 4), **{"font-size": "11"})
        lt.text = col
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
