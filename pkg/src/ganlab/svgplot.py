"""Minimal standalone SVG line and scatter charts."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def read_columns(path) -> dict[str, list[float]]:
    """Numeric columns of a CSV file, skipping ``#`` comment lines and non-numeric cells."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ValueError(f"{path}: no header row")
    header, body = rows[0], rows[1:]
    cols: dict[str, list[float]] = {h: [] for h in header}
    for r in body:
        for h, cell in zip(header, r):
            try:
                cols[h].append(float(cell))
            except ValueError:
                cols[h].append(math.nan)
    return cols


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    ticks, t = [], first
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def render_svg(series: dict[str, tuple[list[float], list[float]]], *, title: str = "", xlabel: str = "",
               ylabel: str = "", kind: str = "line", logx: bool = False, logy: bool = False,
               width: int = 640, height: int = 400) -> str:
    """Chart each named ``(xs, ys)`` series; non-finite points (or non-positive on log axes) are dropped."""
    if kind not in ("line", "scatter"):
        raise ValueError(f"unknown chart kind {kind!r}")

    def tx(v):
        return math.log10(v) if logx else v

    def ty(v):
        return math.log10(v) if logy else v

    clean = {}
    for name, (xs, ys) in series.items():
        pts = [(tx(x), ty(y)) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        clean[name] = pts
    allp = [p for pts in clean.values() for p in pts]
    if not allp:
        raise ValueError("nothing to plot: no finite points")
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in nice_ticks(x0, x1):
        label = _fmt(10 ** t) if logx else _fmt(t)
        out.append(f'<line x1="{px(t):.2f}" y1="{mt + ph}" x2="{px(t):.2f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{mt + ph + 18}" text-anchor="middle">{escape(label)}</text>')
    for t in nice_ticks(y0, y1):
        label = _fmt(10 ** t) if logy else _fmt(t)
        out.append(f'<line x1="{ml - 5}" y1="{py(t):.2f}" x2="{ml}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{escape(label)}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    for k, (name, pts) in enumerate(clean.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        if kind == "line" and len(pts) > 1:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        else:
            out.extend(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{color}"/>' for x, y in pts)
        ly = mt + 14 + 14 * k
        out.append(f'<line x1="{ml + pw - 110}" y1="{ly - 4}" x2="{ml + pw - 92}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw - 88}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csv(csv_path, out_path, x: str, ys, **kwargs) -> Path:
    cols = read_columns(csv_path)
    missing = [c for c in [x, *ys] if c not in cols]
    if missing:
        raise KeyError(f"columns not in {csv_path}: {', '.join(missing)}")
    series = {y: (cols[x], cols[y]) for y in ys}
    kwargs.setdefault("xlabel", x)
    out = Path(out_path)
    out.write_text(render_svg(series, **kwargs))
    return out
