"""Self-contained SVG line charts; no plotting dependencies, byte-stable output."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]

_WIDTH = 960
_HEIGHT = 600
_MARGIN_LEFT = 80
_MARGIN_RIGHT = 210
_MARGIN_TOP = 60
_MARGIN_BOTTOM = 80


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


def _tick(value: float) -> str:
    if value == 0:
        return "0"
    if abs(value) >= 1000 or abs(value) < 0.01:
        return f"{value:.2e}"
    return f"{value:.3g}"


def line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    x_label: str,
    y_label: str,
    vlines: Sequence[tuple[str, float]] = (),
) -> str:
    """Render labelled (x, y) polylines plus optional vertical marker lines."""
    xs_all = [float(x) for _, xs, _ in series for x in xs]
    ys_all = [float(y) for _, _, ys in series for y in ys]
    xs_all.extend(float(x) for _, x in vlines)
    if not xs_all or not ys_all:
        raise ValueError("nothing to plot")
    x_min, x_max = min(xs_all), max(xs_all)
    y_min, y_max = min(ys_all), max(ys_all)
    if x_max <= x_min:
        x_min, x_max = x_min - 1.0, x_max + 1.0
    if y_max <= y_min:
        y_min, y_max = y_min - 1.0, y_max + 1.0
    pad = 0.05 * (y_max - y_min)
    y_min -= pad
    y_max += pad

    left, right = _MARGIN_LEFT, _WIDTH - _MARGIN_RIGHT
    top, bottom = _MARGIN_TOP, _HEIGHT - _MARGIN_BOTTOM

    def px(x: float) -> float:
        return left + (x - x_min) / (x_max - x_min) * (right - left)

    def py(y: float) -> float:
        return bottom - (y - y_min) / (y_max - y_min) * (bottom - top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{_WIDTH / 2:.1f}" y="34" text-anchor="middle" font-size="20" '
        f'font-family="Helvetica">{_escape(title)}</text>',
    ]
    n_ticks = 5
    for i in range(n_ticks + 1):
        yv = y_min + (y_max - y_min) * i / n_ticks
        y = py(yv)
        out.append(
            f'<line x1="{left}" y1="{y:.2f}" x2="{right}" y2="{y:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="12" '
            f'font-family="Helvetica">{_tick(yv)}</text>'
        )
        xv = x_min + (x_max - x_min) * i / n_ticks
        x = px(xv)
        out.append(
            f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 5}" '
            f'stroke="#000000" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{x:.2f}" y="{bottom + 22}" text-anchor="middle" font-size="12" '
            f'font-family="Helvetica">{_tick(xv)}</text>'
        )
    out.append(
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" '
        f'stroke="#000000" stroke-width="2"/>'
    )
    out.append(
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" '
        f'stroke="#000000" stroke-width="2"/>'
    )

    legend_y = top + 16
    for i, (label, xs, ys) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}" for x, y in zip(xs, ys))
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>'
        )
        ly = legend_y + i * 22
        out.append(
            f'<line x1="{right + 16}" y1="{ly}" x2="{right + 38}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{right + 44}" y="{ly + 4}" font-size="13" '
            f'font-family="Helvetica">{_escape(label)}</text>'
        )

    for j, (label, xv) in enumerate(vlines):
        x = px(float(xv))
        out.append(
            f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{bottom}" '
            f'stroke="#444444" stroke-width="1.5" stroke-dasharray="6,4"/>'
        )
        if label:
            out.append(
                f'<text x="{x + 4:.2f}" y="{top + 14 + 14 * j}" font-size="12" '
                f'font-family="Helvetica" fill="#444444">{_escape(label)}</text>'
            )

    out.append(
        f'<text x="{(left + right) / 2:.1f}" y="{_HEIGHT - 28}" text-anchor="middle" '
        f'font-size="14" font-family="Helvetica">{_escape(x_label)}</text>'
    )
    mid_y = (top + bottom) / 2
    out.append(
        f'<text x="24" y="{mid_y:.1f}" text-anchor="middle" font-size="14" '
        f'font-family="Helvetica" transform="rotate(-90 24 {mid_y:.1f})">{_escape(y_label)}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, svg: str) -> None:
    Path(path).write_text(svg, encoding="utf-8")
