"""Minimal standalone SVG rendering for reports (no plotting dependency)."""

from __future__ import annotations

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def line_plot(series: list[tuple[str, np.ndarray, np.ndarray]], title: str = "",
              x_label: str = "", y_label: str = "", width: int = 640,
              height: int = 420) -> str:
    """Polyline chart of (label, xs, ys) series with axes and a legend."""
    ml, mr, mt, mb = 60, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs_all = np.concatenate([np.asarray(xs, float) for _, xs, _ in series])
    ys_all = np.concatenate([np.asarray(ys, float) for _, _, ys in series])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2}" y="22" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{_esc(title)}</text>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt+ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt+ph}" x2="{ml+pw}" y2="{mt+ph}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        parts.append(f'<text x="{px(xv):.1f}" y="{mt+ph+18}" text-anchor="middle" '
                     f'font-size="11" font-family="sans-serif">{xv:.3g}</text>')
        parts.append(f'<text x="{ml-6}" y="{py(yv)+4:.1f}" text-anchor="end" '
                     f'font-size="11" font-family="sans-serif">{yv:.3g}</text>')
    parts.append(f'<text x="{ml+pw/2}" y="{height-10}" text-anchor="middle" '
                 f'font-size="12" font-family="sans-serif">{_esc(x_label)}</text>')
    parts.append(f'<text x="16" y="{mt+ph/2}" text-anchor="middle" font-size="12" '
                 f'font-family="sans-serif" transform="rotate(-90 16 {mt+ph/2})">'
                 f'{_esc(y_label)}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = mt + 14 + 16 * i
        parts.append(f'<line x1="{ml+pw-130}" y1="{ly}" x2="{ml+pw-106}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml+pw-100}" y="{ly+4}" font-size="11" '
                     f'font-family="sans-serif">{_esc(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def heatmap(matrix: np.ndarray, title: str = "", x_label: str = "predicted",
            y_label: str = "true", cell: int = 46) -> str:
    """Count matrix as a shaded grid with the value printed in each cell."""
    m = np.asarray(matrix, dtype=np.float64)
    rows, cols = m.shape
    ml, mt = 70, 50
    width, height = ml + cols * cell + 20, mt + rows * cell + 50
    top = m.max() if m.max() > 0 else 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{_esc(title)}</text>',
    ]
    for i in range(rows):
        for j in range(cols):
            frac = m[i, j] / top
            blue = int(255 - 160 * frac)
            x, y = ml + j * cell, mt + i * cell
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="rgb({blue},{blue},255)" stroke="#888"/>')
            parts.append(f'<text x="{x+cell/2}" y="{y+cell/2+4}" text-anchor="middle" '
                         f'font-size="12" font-family="sans-serif">{int(m[i,j])}</text>')
    for j in range(cols):
        parts.append(f'<text x="{ml+j*cell+cell/2}" y="{mt+rows*cell+16}" '
                     f'text-anchor="middle" font-size="11" font-family="sans-serif">{j}</text>')
    for i in range(rows):
        parts.append(f'<text x="{ml-8}" y="{mt+i*cell+cell/2+4}" text-anchor="end" '
                     f'font-size="11" font-family="sans-serif">{i}</text>')
    parts.append(f'<text x="{ml+cols*cell/2}" y="{height-8}" text-anchor="middle" '
                 f'font-size="12" font-family="sans-serif">{_esc(x_label)}</text>')
    parts.append(f'<text x="16" y="{mt+rows*cell/2}" text-anchor="middle" font-size="12" '
                 f'font-family="sans-serif" transform="rotate(-90 16 {mt+rows*cell/2})">'
                 f'{_esc(y_label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
