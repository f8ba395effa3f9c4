"""Minimal deterministic SVG line charts.

Hand-rolled on purpose: the output bytes depend only on the input data, so
charts can be diffed and asserted on in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

WIDTH = 800
HEIGHT = 480
MARGIN_LEFT = 64
MARGIN_RIGHT = 16
MARGIN_TOP = 40
MARGIN_BOTTOM = 48


@dataclass
class Series:
    label: str
    xs: list[float]
    ys: list[float]


@dataclass
class Marker:
    """Vertical reference line, e.g. a detected steady-state step."""

    x: float
    label: str


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = span / count
    return [lo + i * step for i in range(count + 1)]


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") or "0"


def line_chart(
    series: list[Series],
    *,
    title: str,
    x_label: str = "step",
    y_label: str = "value",
    markers: list[Marker] | None = None,
) -> str:
    """Render one chart; returns the SVG document as text."""
    xs_all = [x for s in series for x in s.xs]
    ys_all = [y for s in series for y in s.ys]
    x_lo, x_hi = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    y_lo, y_hi = (min(ys_all), max(ys_all)) if ys_all else (0.0, 1.0)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(x: float) -> float:
        return MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return MARGIN_TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]

    axis_y = MARGIN_TOP + plot_h
    out.append(
        f'<line x1="{MARGIN_LEFT}" y1="{axis_y}" x2="{MARGIN_LEFT + plot_w}" y2="{axis_y}" '
        'stroke="black" stroke-width="1"/>'
    )
    out.append(
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{axis_y}" '
        'stroke="black" stroke-width="1"/>'
    )
    for tx in _ticks(x_lo, x_hi):
        out.append(
            f'<text x="{px(tx):.1f}" y="{axis_y + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt(tx)}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        out.append(
            f'<text x="{MARGIN_LEFT - 6}" y="{py(ty) + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt(ty)}</text>'
        )
        out.append(
            f'<line x1="{MARGIN_LEFT}" y1="{py(ty):.1f}" x2="{MARGIN_LEFT + plot_w}" '
            f'y2="{py(ty):.1f}" stroke="#dddddd" stroke-width="0.5"/>'
        )
    out.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>'
    )
    out.append(
        f'<text x="16" y="{MARGIN_TOP + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {MARGIN_TOP + plot_h / 2:.1f})">{y_label}</text>'
    )

    for marker in markers or []:
        mx = px(marker.x)
        out.append(
            f'<line x1="{mx:.1f}" y1="{MARGIN_TOP}" x2="{mx:.1f}" y2="{axis_y}" '
            'stroke="#555555" stroke-width="1" stroke-dasharray="5,4"/>'
        )
        out.append(
            f'<text x="{mx + 4:.1f}" y="{MARGIN_TOP + 14}" font-family="sans-serif" '
            f'font-size="11" fill="#555555">{marker.label}</text>'
        )

    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s.xs, s.ys))
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'
        )
        ly = MARGIN_TOP + 16 * idx
        out.append(
            f'<rect x="{MARGIN_LEFT + plot_w - 130}" y="{ly + 2}" width="10" height="10" fill="{color}"/>'
        )
        out.append(
            f'<text x="{MARGIN_LEFT + plot_w - 115}" y="{ly + 11}" font-family="sans-serif" '
            f'font-size="11">{s.label}</text>'
        )

    out.append("</svg>")
    return "\n".join(out) + "\n"
