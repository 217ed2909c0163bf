"""Minimal hand-written SVG charts: line curves, bar charts and mask overlays.

Output is deterministic apart from one ``<!-- generated: ... -->`` comment
holding the timestamp, so artifacts can be diffed.
"""

from __future__ import annotations

import datetime as _dt
import os
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]


def _doc(width, height, body, title, stamp=True) -> str:
    when = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds") if stamp else "-"
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f"<!-- generated: {when} -->\n"
            f'<rect width="{width}" height="{height}" fill="white"/>\n'
            f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>\n')
    return head + "".join(body) + "</svg>\n"


def save_svg(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _axes(x0, y0, w, h, lo, hi, xlabel, ylabel):
    body = [f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="black"/>\n',
            f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y0 + h}" stroke="black"/>\n']
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = y0 + h - h * k / 4
        body.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="black"/>'
                    f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end">{_fmt(v)}</text>\n')
    body.append(f'<text x="{x0 + w / 2:.1f}" y="{y0 + h + 32}" text-anchor="middle">{escape(xlabel)}</text>\n')
    body.append(f'<text x="14" y="{y0 + h / 2:.1f}" transform="rotate(-90 14 {y0 + h / 2:.1f})" '
                f'text-anchor="middle">{escape(ylabel)}</text>\n')
    return body


def line_chart(series: dict, title: str, xlabel: str = "step", ylabel: str = "",
               width: int = 640, height: int = 360, stamp: bool = True) -> str:
    """``series`` maps a legend name to ``(x, y)`` arrays."""
    x0, y0, w, h = 60, 30, width - 200, height - 80
    xs = [np.asarray(x, float) for x, _ in series.values() if len(x)]
    ys = [np.asarray(y, float) for _, y in series.values() if len(y)]
    if not xs:
        return _doc(width, height, [f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no data</text>\n'],
                    title, stamp)
    xlo, xhi = min(x.min() for x in xs), max(x.max() for x in xs)
    ylo, yhi = min(np.nanmin(y) for y in ys), max(np.nanmax(y) for y in ys)
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    xhi = xhi if xhi > xlo else xlo + 1
    body = _axes(x0, y0, w, h, ylo, yhi, xlabel, ylabel)
    body.append(f'<text x="{x0}" y="{y0 + h + 16}" text-anchor="middle">{_fmt(xlo)}</text>'
                f'<text x="{x0 + w}" y="{y0 + h + 16}" text-anchor="middle">{_fmt(xhi)}</text>\n')
    for k, (name, (x, y)) in enumerate(series.items()):
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(y)
        px = x0 + (x[ok] - xlo) / (xhi - xlo) * w
        py = y0 + h - (y[ok] - ylo) / (yhi - ylo) * h
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))
        color = PALETTE[k % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>\n')
        ly = y0 + 14 * k + 8
        body.append(f'<rect x="{x0 + w + 12}" y="{ly - 8}" width="10" height="10" fill="{color}"/>'
                    f'<text x="{x0 + w + 26}" y="{ly + 1}">{escape(str(name))}</text>\n')
    return _doc(width, height, body, title, stamp)


def bar_chart(labels, means, errors, title: str, ylabel: str = "return", absent=(),
              width: int = 640, height: int = 360, stamp: bool = True) -> str:
    """Bars with +/- error whiskers; labels in ``absent`` are drawn as empty slots."""
    x0, y0, w, h = 60, 30, width - 90, height - 80
    vals = [m + e for m, e, lab in zip(means, errors, labels) if lab not in absent and np.isfinite(m)]
    hi = max(vals + [1e-9]) * 1.1
    lo = min([0.0] + [m - e for m, e, lab in zip(means, errors, labels)
                      if lab not in absent and np.isfinite(m)])
    body = _axes(x0, y0, w, h, lo, hi, "cell", ylabel)
    slot = w / max(1, len(labels))

    def ypos(v):
        return y0 + h - (v - lo) / (hi - lo) * h

    for k, (lab, m, e) in enumerate(zip(labels, means, errors)):
        cx = x0 + slot * (k + 0.5)
        body.append(f'<text x="{cx:.1f}" y="{y0 + h + 16}" text-anchor="middle">{escape(str(lab))}</text>\n')
        if lab in absent or not np.isfinite(m):
            body.append(f'<text x="{cx:.1f}" y="{y0 + h - 6}" text-anchor="middle" fill="#999">absent</text>\n')
            continue
        top, base = ypos(m), ypos(0.0)
        body.append(f'<rect x="{cx - slot * 0.3:.1f}" y="{min(top, base):.1f}" width="{slot * 0.6:.1f}" '
                    f'height="{abs(base - top):.1f}" fill="{PALETTE[k % len(PALETTE)]}"/>\n')
        body.append(f'<line x1="{cx:.1f}" y1="{ypos(m - e):.1f}" x2="{cx:.1f}" y2="{ypos(m + e):.1f}" '
                    f'stroke="black"/>\n')
        body.append(f'<text x="{cx:.1f}" y="{top - 4:.1f}" text-anchor="middle">{_fmt(m)}</text>\n')
    return _doc(width, height, body, title, stamp)


def mask_overlay(frames, spatial, temporal, patch: int, title: str, events=(), scale: int = 4,
                 stamp: bool = True) -> str:
    """Frames side by side with dropped patches darkened, and a temporal keep strip below.

    ``frames`` is (T, H, W) in [0, 1]; ``spatial`` (T, n_patches) binary for one
    layer; ``temporal`` (T,) binary; ``events`` holds ``(label, t)`` pairs.
    """
    frames = np.asarray(frames, float)
    T, H, W = frames.shape
    lo, hi = frames.min(), frames.max()
    norm = (frames - lo) / (hi - lo) if hi > lo else np.zeros_like(frames)
    gap = 6
    width = T * (W * scale + gap) + 20
    height = H * scale + 90
    body = []
    per_row = W // patch
    for t in range(T):
        ox = 10 + t * (W * scale + gap)
        oy = 28
        for r in range(H):
            for c in range(W):
                g = int(round(255 * norm[t, r, c]))
                body.append(f'<rect x="{ox + c * scale}" y="{oy + r * scale}" width="{scale}" '
                            f'height="{scale}" fill="rgb({g},{g},{g})"/>')
        body.append("\n")
        for p, keep in enumerate(np.asarray(spatial[t]).reshape(-1)):
            if not keep:
                pr, pc = divmod(p, per_row)
                body.append(f'<rect x="{ox + pc * patch * scale}" y="{oy + pr * patch * scale}" '
                            f'width="{patch * scale}" height="{patch * scale}" fill="black" '
                            f'fill-opacity="0.7" class="dropped"/>\n')
        sy = oy + H * scale + 8
        fill = "#2ca02c" if temporal[t] else "#d62728"
        body.append(f'<rect x="{ox}" y="{sy}" width="{W * scale}" height="12" fill="{fill}" '
                    f'class="{"kept" if temporal[t] else "dropped-step"}"/>'
                    f'<text x="{ox + W * scale / 2}" y="{sy + 26}" text-anchor="middle">t={t}</text>\n')
        for label, et in events:
            if et == t:
                body.append(f'<text x="{ox + W * scale / 2}" y="{sy + 40}" text-anchor="middle" '
                            f'fill="#1f77b4">{escape(str(label))}</text>\n')
    return _doc(width, height, body, title, stamp)
