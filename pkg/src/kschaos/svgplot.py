"""Small deterministic SVG line charts with no renderer dependency.

Charts are emitted as plain SVG text with fixed geometry, a fixed palette,
and fixed number formatting, so identical inputs give identical bytes.
Axes switch to log scale when every plotted value (bands included) is
positive, and on a log-log chart each series carries the fitted slope of
log y against log x in its legend label.
"""

import math
from dataclasses import dataclass

import numpy as np

WIDTH, HEIGHT = 640.0, 480.0
MARGIN_LEFT, MARGIN_RIGHT = 76.0, 20.0
MARGIN_TOP, MARGIN_BOTTOM = 42.0, 56.0
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


@dataclass
class Series:
    """One polyline: points, and an optional confidence band."""
    label: str
    x: np.ndarray
    y: np.ndarray
    band_lo: np.ndarray = None
    band_hi: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.size == 0 or self.x.shape != self.y.shape:
            raise ValueError("series needs matching nonempty x and y")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("series values must be finite")
        for name in ("band_lo", "band_hi"):
            b = getattr(self, name)
            if b is not None:
                b = np.asarray(b, dtype=float).ravel()
                if b.shape != self.x.shape or not np.all(np.isfinite(b)):
                    raise ValueError("band must match x and be finite")
                setattr(self, name, b)
        if (self.band_lo is None) != (self.band_hi is None):
            raise ValueError("bands need both edges")


def _esc(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _px(v):
    return "%.2f" % v


def _label(v):
    return "%.4g" % v


def _nice_ticks(lo, hi, target=5):
    span = hi - lo
    if span <= 0.0:
        return [lo]
    raw = span / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10.0 * mag
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (mult * mag) <= target:
            step = mult * mag
            break
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * max(1.0, abs(hi)):
        # round off accumulated float noise so labels stay clean
        ticks.append(float(np.round(t, 12)))
        t += step
    return ticks or [lo, hi]


def _log_ticks(lo, hi):
    k0 = math.ceil(math.log10(lo) - 1e-9)
    k1 = math.floor(math.log10(hi) + 1e-9)
    ticks = [10.0 ** k for k in range(k0, k1 + 1)]
    if len(ticks) < 2:
        ticks = sorted(set(ticks + [lo, hi]))
    return ticks


def _fit_slope(x, y):
    lx, ly = np.log(x), np.log(y)
    dx = lx - lx.mean()
    sxx = float(np.sum(dx * dx))
    if sxx == 0.0:
        return None
    return float(np.sum(dx * (ly - ly.mean())) / sxx)


class _Axis:
    """Maps one data dimension onto pixels, linearly or in log10."""

    def __init__(self, lo, hi, pix_lo, pix_hi, log):
        self.log = log
        t0 = math.log10(lo) if log else lo
        t1 = math.log10(hi) if log else hi
        if t1 <= t0:
            t0, t1 = t0 - 0.5, t1 + 0.5
        pad = 0.05 * (t1 - t0)
        self.t0, self.t1 = t0 - pad, t1 + pad
        self.pix_lo, self.pix_hi = pix_lo, pix_hi
        self.ticks = (_log_ticks(lo, hi) if log
                      else _nice_ticks(lo, hi))

    def pix(self, v):
        t = math.log10(v) if self.log else v
        frac = (t - self.t0) / (self.t1 - self.t0)
        return self.pix_lo + frac * (self.pix_hi - self.pix_lo)


def line_chart(path, series, title="", xlabel="", ylabel="",
               logx=None, logy=None):
    """Write one chart; returns the path.

    logx/logy default to automatic: log scale whenever every value on
    that axis (confidence bands included) is positive.
    """
    series = list(series)
    if not series:
        raise ValueError("nothing to plot")
    xs = np.concatenate([s.x for s in series])
    ys = [s.y for s in series]
    for s in series:
        if s.band_lo is not None:
            ys += [s.band_lo, s.band_hi]
    ys = np.concatenate(ys)
    if logx is None:
        logx = bool(np.all(xs > 0.0))
    if logy is None:
        logy = bool(np.all(ys > 0.0))
    if logx and np.any(xs <= 0.0):
        raise ValueError("log x axis needs positive x values")
    if logy and np.any(ys <= 0.0):
        raise ValueError("log y axis needs positive y values")
    ax_x = _Axis(float(xs.min()), float(xs.max()),
                 MARGIN_LEFT, WIDTH - MARGIN_RIGHT, logx)
    ax_y = _Axis(float(ys.min()), float(ys.max()),
                 HEIGHT - MARGIN_BOTTOM, MARGIN_TOP, logy)

    out = []
    out.append('<svg xmlns="http://www.w3.org/2000/svg" width="%g" '
               'height="%g" viewBox="0 0 %g %g" font-family="sans-serif" '
               'font-size="12">' % (WIDTH, HEIGHT, WIDTH, HEIGHT))
    out.append('<rect width="%g" height="%g" fill="#ffffff"/>'
               % (WIDTH, HEIGHT))
    # frame and gridlines
    x0, x1 = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    y0, y1 = HEIGHT - MARGIN_BOTTOM, MARGIN_TOP
    for tv in ax_x.ticks:
        px = ax_x.pix(tv)
        out.append('<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="#dddddd"/>'
                   % (_px(px), _px(y0), _px(px), _px(y1)))
        out.append('<text x="%s" y="%s" text-anchor="middle" '
                   'fill="#333333">%s</text>'
                   % (_px(px), _px(y0 + 16.0), _esc(_label(tv))))
    for tv in ax_y.ticks:
        py = ax_y.pix(tv)
        out.append('<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="#dddddd"/>'
                   % (_px(x0), _px(py), _px(x1), _px(py)))
        out.append('<text x="%s" y="%s" text-anchor="end" '
                   'fill="#333333">%s</text>'
                   % (_px(x0 - 6.0), _px(py + 4.0), _esc(_label(tv))))
    out.append('<rect x="%s" y="%s" width="%s" height="%s" fill="none" '
               'stroke="#333333"/>' % (_px(x0), _px(y1), _px(x1 - x0),
                                       _px(y0 - y1)))
    if title:
        out.append('<text x="%s" y="%s" text-anchor="middle" '
                   'font-size="14" fill="#000000">%s</text>'
                   % (_px(0.5 * WIDTH), _px(MARGIN_TOP - 14.0), _esc(title)))
    if xlabel:
        out.append('<text x="%s" y="%s" text-anchor="middle" '
                   'fill="#000000">%s</text>'
                   % (_px(0.5 * (x0 + x1)), _px(HEIGHT - 14.0), _esc(xlabel)))
    if ylabel:
        out.append('<text x="%s" y="%s" text-anchor="middle" '
                   'fill="#000000" transform="rotate(-90 %s %s)">%s</text>'
                   % (_px(18.0), _px(0.5 * (y0 + y1)), _px(18.0),
                      _px(0.5 * (y0 + y1)), _esc(ylabel)))

    legend = []
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        order = np.argsort(s.x, kind="stable")
        sx, sy = s.x[order], s.y[order]
        if s.band_lo is not None:
            blo, bhi = s.band_lo[order], s.band_hi[order]
            pts = ([(v, b) for v, b in zip(sx, bhi)]
                   + [(v, b) for v, b in zip(sx[::-1], blo[::-1])])
            poly = " ".join("%s,%s" % (_px(ax_x.pix(px)), _px(ax_y.pix(py)))
                            for px, py in pts)
            out.append('<polygon points="%s" fill="%s" fill-opacity="0.15" '
                       'stroke="none"/>' % (poly, color))
        line = " ".join("%s,%s" % (_px(ax_x.pix(px)), _px(ax_y.pix(py)))
                        for px, py in zip(sx, sy))
        out.append('<polyline points="%s" fill="none" stroke="%s" '
                   'stroke-width="1.5"/>' % (line, color))
        for px, py in zip(sx, sy):
            out.append('<circle cx="%s" cy="%s" r="2.5" fill="%s"/>'
                       % (_px(ax_x.pix(px)), _px(ax_y.pix(py)), color))
        label = s.label
        if logx and logy and sx.size >= 2:
            slope = _fit_slope(sx, sy)
            if slope is not None:
                label = "%s [slope %.2f]" % (label, slope)
        legend.append((color, label))

    ly = MARGIN_TOP + 14.0
    for color, label in legend:
        out.append('<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="%s" '
                   'stroke-width="2"/>' % (_px(x1 - 150.0), _px(ly - 4.0),
                                           _px(x1 - 128.0), _px(ly - 4.0),
                                           color))
        out.append('<text x="%s" y="%s" fill="#000000">%s</text>'
                   % (_px(x1 - 122.0), _px(ly), _esc(label)))
        ly += 16.0
    out.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")
    return path
