"""Minimal SVG line plot for accuracy curves. No drawing dependency.

Layout mirrors the usual accuracy-vs-round figure: dotted line for the main
task, solid for the backdoor task, green overlay for the backdoor cumulative
mean. Output is deterministic text so runs can be diffed byte for byte.
"""

from __future__ import annotations

import math

from .metrics import RoundReport

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 52, 16, 20, 44   # margins: left right top bottom


def _x(t: int, last: int) -> float:
    span = _W - _ML - _MR
    frac = 0.0 if last == 0 else t / last
    return _ML + frac * span


def _y(acc: float) -> float:
    span = _H - _MT - _MB
    return _MT + (1.0 - acc) * span


def _points(values: list[float], last: int) -> str:
    pts = []
    for t, v in enumerate(values):
        if math.isnan(v):
            continue
        pts.append(f"{_x(t, last):.2f},{_y(v):.2f}")
    return " ".join(pts)


def _polyline(values, last, color, dash=None, width=1.5):
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}"'
        f'{dash_attr} points="{_points(values, last)}"/>'
    )


def render_curves(reports: list[RoundReport]) -> str:
    """SVG text for the three accuracy curves of one run."""
    last = max(1, len(reports) - 1)
    main = [r.main_accuracy for r in reports]
    bd = [r.backdoor_accuracy for r in reports]
    cum = [r.backdoor_cummean for r in reports]

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
    ]

    # frame and gridlines at 0.2 accuracy steps
    x0, x1 = _ML, _W - _MR
    y0, y1 = _MT, _H - _MB
    for i in range(6):
        acc = i / 5
        y = _y(acc)
        parts.append(
            f'<line x1="{x0}" y1="{y:.2f}" x2="{x1}" y2="{y:.2f}" '
            f'stroke="#ddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{y + 4:.2f}" font-size="12" '
            f'text-anchor="end" fill="#444">{acc:.1f}</text>'
        )
    ticks = _round_ticks(len(reports))
    for t in ticks:
        x = _x(t, last)
        parts.append(
            f'<line x1="{x:.2f}" y1="{y1}" x2="{x:.2f}" y2="{y1 + 5}" '
            f'stroke="#444" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{y1 + 20}" font-size="12" '
            f'text-anchor="middle" fill="#444">{t}</text>'
        )
    parts.append(
        f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
        f'fill="none" stroke="#444" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{(x0 + x1) // 2}" y="{_H - 8}" font-size="13" '
        f'text-anchor="middle" fill="#222">round</text>'
    )
    parts.append(
        f'<text x="14" y="{(y0 + y1) // 2}" font-size="13" text-anchor="middle" '
        f'fill="#222" transform="rotate(-90 14 {(y0 + y1) // 2})">accuracy</text>'
    )

    parts.append(_polyline(cum, last, "#2ca02c", width=2.0))
    parts.append(_polyline(bd, last, "#d62728"))
    parts.append(_polyline(main, last, "#1f77b4", dash="2 4"))

    legend = [
        ("#1f77b4", "2 4", "main task"),
        ("#d62728", None, "backdoor"),
        ("#2ca02c", None, "backdoor cumulative mean"),
    ]
    lx, ly = x0 + 10, y0 + 14
    for i, (color, dash, label) in enumerate(legend):
        y = ly + 16 * i
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(
            f'<line x1="{lx}" y1="{y}" x2="{lx + 26}" y2="{y}" '
            f'stroke="{color}" stroke-width="2"{dash_attr}/>'
        )
        parts.append(
            f'<text x="{lx + 32}" y="{y + 4}" font-size="12" fill="#222">{label}</text>'
        )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _round_ticks(rounds: int) -> list[int]:
    if rounds <= 1:
        return [0]
    last = rounds - 1
    step = 1
    for cand in (1, 2, 5, 10, 20, 25, 50, 100, 200, 500):
        step = cand
        if last / cand <= 8:
            break
    ticks = list(range(0, last + 1, step))
    if ticks[-1] != last:
        ticks.append(last)
    return ticks
