"""Minimal dependency-free SVG line plots (axes, ticks, legend, markers).

Deliberately small: enough to render the energy/bound and state
trajectory figures without a plotting library.
"""

import math

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"]


def _ticks(lo, hi, target=6):
    """Round tick locations covering [lo, hi]."""
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if raw <= m * mag:
            step = m * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return "%.0e" % v
    return ("%g" % round(v, 6))


class LinePlot:
    def __init__(self, title="", xlabel="", ylabel="", width=720, height=420,
                 logy=False):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.width = width
        self.height = height
        self.logy = logy
        self.series = []
        self.vlines = []

    def add_series(self, x, y, label="", color=None, dash=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.logy:
            keep = y > 0
            x, y = x[keep], np.log10(y[keep])
        if color is None:
            color = _COLORS[len(self.series) % len(_COLORS)]
        self.series.append((x, y, label, color, dash))

    def add_vline(self, x, label="", color="#888888"):
        self.vlines.append((float(x), label, color))

    def render(self):
        ml, mr, mt, mb = 70, 20, 34, 52
        pw = self.width - ml - mr
        ph = self.height - mt - mb
        xs = np.concatenate([s[0] for s in self.series]) if self.series else np.array([0, 1])
        ys = np.concatenate([s[1] for s in self.series]) if self.series else np.array([0, 1])
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        if x1 <= x0:
            x1 = x0 + 1
        if y1 <= y0:
            y1 = y0 + 1
        pad = 0.05 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad

        def X(v):
            return ml + (v - x0) / (x1 - x0) * pw

        def Y(v):
            return mt + ph - (v - y0) / (y1 - y0) * ph

        out = ['<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
               'font-family="Helvetica,Arial,sans-serif" font-size="12">'
               % (self.width, self.height)]
        out.append('<rect width="%d" height="%d" fill="white"/>' % (self.width, self.height))
        # axes frame
        out.append('<rect x="%g" y="%g" width="%g" height="%g" fill="none" '
                   'stroke="black"/>' % (ml, mt, pw, ph))
        for tx in _ticks(x0, x1):
            if x0 <= tx <= x1:
                out.append('<line x1="%g" y1="%g" x2="%g" y2="%g" stroke="black"/>'
                           % (X(tx), mt + ph, X(tx), mt + ph + 5))
                out.append('<text x="%g" y="%g" text-anchor="middle">%s</text>'
                           % (X(tx), mt + ph + 18, _fmt(tx)))
        for ty in _ticks(y0, y1):
            if y0 <= ty <= y1:
                label = "1e%s" % _fmt(ty) if self.logy else _fmt(ty)
                out.append('<line x1="%g" y1="%g" x2="%g" y2="%g" stroke="black"/>'
                           % (ml - 5, Y(ty), ml, Y(ty)))
                out.append('<text x="%g" y="%g" text-anchor="end">%s</text>'
                           % (ml - 8, Y(ty) + 4, label))
        for vx, vlabel, vcolor in self.vlines:
            if x0 <= vx <= x1:
                out.append('<line x1="%g" y1="%g" x2="%g" y2="%g" stroke="%s" '
                           'stroke-dasharray="3,3"/>' % (X(vx), mt, X(vx), mt + ph, vcolor))
                if vlabel:
                    out.append('<text x="%g" y="%g" fill="%s">%s</text>'
                               % (X(vx) + 3, mt + 12, vcolor, vlabel))
        for x, y, label, color, dash in self.series:
            pts = " ".join("%g,%g" % (X(a), Y(b)) for a, b in zip(x, y))
            d = ' stroke-dasharray="%s"' % dash if dash else ""
            out.append('<polyline points="%s" fill="none" stroke="%s" '
                       'stroke-width="1.5"%s/>' % (pts, color, d))
        # legend
        ly = mt + 8
        for x, y, label, color, dash in self.series:
            if not label:
                continue
            out.append('<line x1="%g" y1="%g" x2="%g" y2="%g" stroke="%s" '
                       'stroke-width="1.5"/>' % (ml + pw - 150, ly, ml + pw - 125, ly, color))
            out.append('<text x="%g" y="%g">%s</text>' % (ml + pw - 120, ly + 4, label))
            ly += 16
        if self.title:
            out.append('<text x="%g" y="%g" text-anchor="middle" font-size="14">%s</text>'
                       % (ml + pw / 2, 20, self.title))
        if self.xlabel:
            out.append('<text x="%g" y="%g" text-anchor="middle">%s</text>'
                       % (ml + pw / 2, self.height - 12, self.xlabel))
        if self.ylabel:
            out.append('<text x="16" y="%g" text-anchor="middle" '
                       'transform="rotate(-90 16 %g)">%s</text>'
                       % (mt + ph / 2, mt + ph / 2,
                          ("log10 " + self.ylabel) if self.logy else self.ylabel))
        out.append("</svg>")
        return "\n".join(out)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())
