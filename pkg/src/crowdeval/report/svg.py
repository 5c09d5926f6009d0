"""Hand-written SVG for the two report figures.  Output is deterministic text."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .. import __version__

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _doc(width: int, height: int, body: list[str]) -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- generated by crowdeval {__version__} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    return "\n".join(head + body + ["</svg>", ""])


def radar_svg(axes: list[str], series: dict[str, list[float | None]], *, title: str = "",
              footnotes: list[str] = ()) -> str:
    """One polygon per model over per-question axes scaled 0-100.

    Absent values (e.g. a model's own question) are drawn at the centre with a hollow marker.
    """
    size, legend_w = 560, 180
    cx, cy, radius = size / 2, size / 2 + 10, size / 2 - 100
    height = size + 30 + 16 * len(footnotes)
    body = []
    if title:
        body.append(f'<text x="{_f(cx)}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>')
    k = len(axes)
    if k < 3:
        body.append(f'<text x="{_f(cx)}" y="{_f(cy)}" text-anchor="middle">'
                    f'radar needs at least 3 question axes (have {k})</text>')
    else:
        angle = lambda i: -math.pi / 2 + 2 * math.pi * i / k  # noqa: E731
        point = lambda i, v: (cx + radius * v / 100 * math.cos(angle(i)),  # noqa: E731
                              cy + radius * v / 100 * math.sin(angle(i)))
        for ring in (20, 40, 60, 80, 100):
            pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in (point(i, ring) for i in range(k)))
            body.append(f'<polygon points="{pts}" fill="none" stroke="#ccc" stroke-width="0.8"/>')
            body.append(f'<text x="{_f(cx + 3)}" y="{_f(cy - radius * ring / 100)}" fill="#999" font-size="9">{ring}</text>')
        for i, name in enumerate(axes):
            x, y = point(i, 100)
            lx, ly = point(i, 112)
            anchor = "middle" if abs(lx - cx) < 5 else ("start" if lx > cx else "end")
            body.append(f'<line x1="{_f(cx)}" y1="{_f(cy)}" x2="{_f(x)}" y2="{_f(y)}" stroke="#ccc" stroke-width="0.8"/>')
            body.append(f'<text x="{_f(lx)}" y="{_f(ly)}" text-anchor="{anchor}" font-size="10">{escape(name)}</text>')
        for s, (model, values) in enumerate(series.items()):
            color = PALETTE[s % len(PALETTE)]
            pts = [point(i, v if v is not None else 0.0) for i, v in enumerate(values)]
            path = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
            body.append(f'<polygon points="{path}" fill="{color}" fill-opacity="0.08" stroke="{color}" stroke-width="1.6"/>')
            for (x, y), v in zip(pts, values):
                fill = color if v is not None else "white"
                body.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="3" fill="{fill}" stroke="{color}"/>')
    for s, model in enumerate(series):
        y = 50 + 18 * s
        color = PALETTE[s % len(PALETTE)]
        body.append(f'<rect x="{size + 10}" y="{y - 10}" width="12" height="12" fill="{color}"/>')
        body.append(f'<text x="{size + 28}" y="{y}">{escape(model)}</text>')
    for i, note in enumerate(footnotes):
        body.append(f'<text x="10" y="{size + 20 + 16 * i}" font-size="10" fill="#555">{escape(note)}</text>')
    return _doc(size + legend_w, height, body)


def scatter_svg(points: dict[str, tuple[float | None, float | None]], *, x_label: str, y_label: str,
                title: str = "", footnotes: list[str] = ()) -> str:
    """Labelled scatter on fixed 0-100 axes; models missing either coordinate are listed below."""
    w, h, m = 560, 520, 60
    pw, ph = w - 2 * m, h - 2 * m
    sx = lambda v: m + pw * v / 100  # noqa: E731
    sy = lambda v: h - m - ph * v / 100  # noqa: E731
    body = []
    if title:
        body.append(f'<text x="{w / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>')
    body.append(f'<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    for t in range(0, 101, 20):
        body.append(f'<line x1="{_f(sx(t))}" y1="{h - m}" x2="{_f(sx(t))}" y2="{h - m + 5}" stroke="#333"/>')
        body.append(f'<text x="{_f(sx(t))}" y="{h - m + 18}" text-anchor="middle" font-size="10">{t}</text>')
        body.append(f'<line x1="{m - 5}" y1="{_f(sy(t))}" x2="{m}" y2="{_f(sy(t))}" stroke="#333"/>')
        body.append(f'<text x="{m - 8}" y="{_f(sy(t) + 3)}" text-anchor="end" font-size="10">{t}</text>')
    body.append(f'<text x="{w / 2}" y="{h - 15}" text-anchor="middle">{escape(x_label)}</text>')
    body.append(f'<text x="15" y="{h / 2}" text-anchor="middle" transform="rotate(-90 15 {h / 2})">{escape(y_label)}</text>')
    missing = []
    for i, (model, (x, y)) in enumerate(points.items()):
        if x is None or y is None:
            missing.append(model)
            continue
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<circle cx="{_f(sx(x))}" cy="{_f(sy(y))}" r="5" fill="{color}"/>')
        body.append(f'<text x="{_f(sx(x) + 7)}" y="{_f(sy(y) - 7)}" font-size="11">{escape(model)}</text>')
    notes = list(footnotes)
    if missing:
        notes.append("not plotted (missing a coordinate): " + ", ".join(missing))
    for i, note in enumerate(notes):
        body.append(f'<text x="10" y="{h + 14 + 16 * i}" font-size="10" fill="#555">{escape(note)}</text>')
    return _doc(w, h + 16 * len(notes) + 10, body)
