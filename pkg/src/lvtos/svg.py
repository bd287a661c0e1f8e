"""Tiny deterministic SVG writer: fixed number formatting, elements emitted in call order."""
from __future__ import annotations

from xml.sax.saxutils import escape, quoteattr

import numpy as np


def fmt(x: float) -> str:
    s = f"{float(x):.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class SvgDoc:
    def __init__(self, width: float, height: float):
        self.width, self.height = width, height
        self.items: list[str] = []

    def _attrs(self, **kw) -> str:
        parts = []
        for k, v in kw.items():
            if v is None:
                continue
            key = {"cls": "class", "stroke_width": "stroke-width", "anchor": "text-anchor",
                   "size": "font-size"}.get(k, k)
            val = fmt(v) if isinstance(v, float) else str(v)
            parts.append(f"{key}={quoteattr(val)}")
        return " ".join(parts)

    def path(self, d: str, **kw) -> None:
        self.items.append(f"<path d={quoteattr(d)} {self._attrs(**kw)}/>")

    def rect(self, x, y, w, h, **kw) -> None:
        self.items.append(f"<rect {self._attrs(x=float(x), y=float(y), width=float(w), height=float(h), **kw)}/>")

    def line(self, x1, y1, x2, y2, stroke="#000000", **kw) -> None:
        self.items.append(f"<line {self._attrs(x1=float(x1), y1=float(y1), x2=float(x2), y2=float(y2), stroke=stroke, **kw)}/>")

    def polyline(self, xs, ys, stroke="#000000", **kw) -> None:
        pts = " ".join(f"{fmt(x)},{fmt(y)}" for x, y in zip(xs, ys))
        self.items.append(f"<polyline {self._attrs(points=pts, fill='none', stroke=stroke, **kw)}/>")

    def text(self, x, y, s: str, anchor: str | None = None, size: float | None = None, **kw) -> None:
        attrs = self._attrs(x=float(x), y=float(y), anchor=anchor,
                            size=None if size is None else float(size), **kw)
        self.items.append(f"<text {attrs} font-family=\"sans-serif\">{escape(s)}</text>")

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{fmt(self.width)}" '
                f'height="{fmt(self.height)}" viewBox="0 0 {fmt(self.width)} {fmt(self.height)}">')
        return "\n".join([head, *self.items, "</svg>"]) + "\n"


def tos_curve_plot(truth, baseline, predicted, title: str = "", width: float = 420,
                   height: float = 260) -> str:
    """Three TOS polylines (frames) over segment index: truth black, baseline blue, network orange."""
    series = [("ground truth", truth, "#000000"), ("baseline", baseline, "#1f77b4"),
              ("network", predicted, "#ff7f0e")]
    allv = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    lo, hi = 0.0, max(float(allv.max()), 1.0)
    ml, mr, mt, mb = 45.0, 15.0, 25.0, 35.0
    pw, ph = width - ml - mr, height - mt - mb
    n = len(truth)

    def sx(i):
        return ml + pw * i / max(n - 1, 1)

    def sy(v):
        return mt + ph * (1 - (v - lo) / (hi - lo))

    doc = SvgDoc(width, height)
    doc.rect(ml, mt, pw, ph, fill="none", stroke="#999999")
    doc.text(width / 2, 16, title, anchor="middle", size=12.0)
    for i in range(0, n, 3):
        doc.text(sx(i), height - mb + 14, str(i), anchor="middle", size=9.0)
    doc.text(width / 2, height - 6, "segment", anchor="middle", size=10.0)
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        doc.text(ml - 4, sy(v) + 3, f"{v:.1f}", anchor="end", size=9.0)
    for name, vals, color in series:
        vals = np.asarray(vals, dtype=float)
        doc.polyline([sx(i) for i in range(n)], [sy(v) for v in vals], stroke=color,
                     stroke_width=1.5, cls=name.replace(" ", "-"))
    for j, (name, _, color) in enumerate(series):
        y = mt + 10 + 12 * j
        doc.line(ml + 8, y, ml + 24, y, stroke=color, stroke_width=1.5)
        doc.text(ml + 28, y + 3, name, size=9.0)
    return doc.render()
