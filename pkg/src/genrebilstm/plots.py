"""Dependency-free SVG emitters for training curves and confusion matrices."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np


def _header(width, height):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f'<rect width="{width}" height="{height}" fill="white"/>']


def _panel(x0, y0, w, h, epochs, series, title, ylabel):
    out = [f'<g transform="translate({x0},{y0})">',
           f'<rect width="{w}" height="{h}" fill="none" stroke="#444"/>',
           f'<text x="{w / 2}" y="-8" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<text x="-38" y="{h / 2}" transform="rotate(-90 -38 {h / 2})" '
           f'text-anchor="middle">{escape(ylabel)}</text>',
           f'<text x="{w / 2}" y="{h + 30}" text-anchor="middle">epoch</text>']
    values = np.concatenate([np.asarray(v, dtype=float) for _, v, _ in series])
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    e_lo, e_hi = min(epochs), max(epochs)
    span = max(e_hi - e_lo, 1)

    def px(e, v):
        return (e - e_lo) / span * w, h - (v - lo) / (hi - lo) * h

    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        y = h - frac * h
        out.append(f'<text x="-4" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="0" y="{h + 14}" text-anchor="middle">{e_lo}</text>')
    out.append(f'<text x="{w}" y="{h + 14}" text-anchor="middle">{e_hi}</text>')
    for i, (name, vals, color) in enumerate(series):
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in (px(e, v) for e, v in zip(epochs, vals)))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{pts}"/>')
        out.append(f'<text x="{w - 90}" y="{16 + 14 * i}" fill="{color}">{escape(name)}</text>')
    out.append("</g>")
    return out


def curves_svg(history) -> str:
    """Two panels: accuracy and loss per epoch, train vs validation."""
    recs = history.records
    epochs = [r.epoch for r in recs]
    w, h = 360, 240
    svg = _header(2 * w + 160, h + 90)
    svg += _panel(60, 30, w, h, epochs,
                  [("train", [r.train_acc for r in recs], "#1f77b4"),
                   ("validation", [r.val_acc for r in recs], "#ff7f0e")],
                  "Accuracy", "accuracy")
    svg += _panel(w + 130, 30, w, h, epochs,
                  [("train", [r.train_loss for r in recs], "#1f77b4"),
                   ("validation", [r.val_loss for r in recs], "#ff7f0e")],
                  "Loss", "cross-entropy")
    svg.append("</svg>")
    return "\n".join(svg) + "\n"


def confusion_svg(confusion, labels) -> str:
    confusion = np.asarray(confusion)
    n = len(labels)
    cell = 36
    margin = 9 * max(len(g) for g in labels) + 20
    size = margin + n * cell + 20
    svg = _header(size, size + 20)
    peak = max(int(confusion.max()), 1)
    for i in range(n):
        row_total = max(int(confusion[i].sum()), 1)
        for j in range(n):
            v = int(confusion[i, j])
            shade = int(255 - 200 * v / peak)
            x, y = margin + j * cell, margin + i * cell
            svg.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="rgb({shade},{shade},255)" stroke="#ccc">'
                       f'<title>{escape(labels[i])} -> {escape(labels[j])}: {v} '
                       f'({v / row_total:.0%})</title></rect>')
            color = "white" if v > peak / 2 else "black"
            svg.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                       f'fill="{color}">{v}</text>')
        svg.append(f'<text x="{margin - 6}" y="{margin + i * cell + cell / 2 + 4}" '
                   f'text-anchor="end">{escape(labels[i])}</text>')
        cx = margin + i * cell + cell / 2
        svg.append(f'<text x="{cx}" y="{margin - 6}" transform="rotate(-60 {cx} {margin - 6})">'
                   f'{escape(labels[i])}</text>')
    svg.append(f'<text x="{margin + n * cell / 2}" y="{size + 10}" text-anchor="middle">predicted</text>')
    svg.append(f'<text x="12" y="{margin + n * cell / 2}" transform="rotate(-90 12 {margin + n * cell / 2})" '
               f'text-anchor="middle">true</text>')
    svg.append("</svg>")
    return "\n".join(svg) + "\n"
