"""Small deterministic SVG plotting helpers.

Charts are written as plain SVG text with all coordinates formatted via
%.6g, so rerunning an experiment with the same data reproduces the file
byte for byte. Only the three chart shapes the experiment runners need
are provided: a ratio scatter with a unit guide line, residual
convergence lines on a log scale, and a log-log error-versus-step chart
with a reference-slope guide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Series",
    "scatter_ratio_svg",
    "convergence_lines_svg",
    "error_vs_h_svg",
    "write_svg",
]

_WIDTH = 640.0
_HEIGHT = 440.0
_MARGIN_L = 72.0
_MARGIN_R = 24.0
_MARGIN_T = 40.0
_MARGIN_B = 56.0

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#e377c2", "#17becf")


@dataclass(frozen=True)
class Series:
    """One named line or point cloud."""

    x: tuple[float, ...]
    y: tuple[float, ...]
    label: str

    @classmethod
    def of(cls, x: Sequence[float], y: Sequence[float], label: str) -> "Series":
        x = tuple(float(v) for v in x)
        y = tuple(float(v) for v in y)
        if len(x) != len(y):
            raise ValueError(f"series {label!r}: {len(x)} x values vs {len(y)} y values")
        return cls(x=x, y=y, label=label)


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def _finite_pairs(s: Series, log_x: bool, log_y: bool):
    pairs = []
    dropped = 0
    for xv, yv in zip(s.x, s.y):
        ok = np.isfinite(xv) and np.isfinite(yv)
        if ok and log_x:
            ok = xv > 0
        if ok and log_y:
            ok = yv > 0
        if ok:
            pairs.append((xv, yv))
        else:
            dropped += 1
    return pairs, dropped


class _Axes:
    """Maps data coordinates to the SVG plot rectangle."""

    def __init__(self, x_range, y_range, log_x=False, log_y=False):
        self.log_x, self.log_y = log_x, log_y
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if log_x:
            self.x0, self.x1 = np.log10(self.x0), np.log10(self.x1)
        if log_y:
            self.y0, self.y1 = np.log10(self.y0), np.log10(self.y1)
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, xv: float) -> float:
        t = np.log10(xv) if self.log_x else xv
        frac = (t - self.x0) / (self.x1 - self.x0)
        return _MARGIN_L + frac * (_WIDTH - _MARGIN_L - _MARGIN_R)

    def py(self, yv: float) -> float:
        t = np.log10(yv) if self.log_y else yv
        frac = (t - self.y0) / (self.y1 - self.y0)
        return _HEIGHT - _MARGIN_B - frac * (_HEIGHT - _MARGIN_T - _MARGIN_B)

    def x_ticks(self):
        return self._ticks(self.x0, self.x1, self.log_x)

    def y_ticks(self):
        return self._ticks(self.y0, self.y1, self.log_y)

    @staticmethod
    def _ticks(lo: float, hi: float, log: bool):
        if log:
            lo_d, hi_d = int(np.floor(lo)), int(np.ceil(hi))
            decades = list(range(lo_d, hi_d + 1))
            step = max(1, int(np.ceil(len(decades) / 8)))
            return [10.0**d for d in decades[::step]]
        return [float(v) for v in np.linspace(lo, hi, 5)]


def _svg_open(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(_WIDTH)}" '
        f'height="{_fmt(_HEIGHT)}" viewBox="0 0 {_fmt(_WIDTH)} {_fmt(_HEIGHT)}">',
        f'<rect width="{_fmt(_WIDTH)}" height="{_fmt(_HEIGHT)}" fill="#ffffff"/>',
        f'<text x="{_fmt(_WIDTH / 2)}" y="22" text-anchor="middle" '
        f'font-family="monospace" font-size="14">{_escape(title)}</text>',
    ]


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _axes_svg(ax: _Axes, x_label: str, y_label: str) -> list[str]:
    left, right = _MARGIN_L, _WIDTH - _MARGIN_R
    top, bottom = _MARGIN_T, _HEIGHT - _MARGIN_B
    parts = [
        f'<line x1="{_fmt(left)}" y1="{_fmt(bottom)}" x2="{_fmt(right)}" '
        f'y2="{_fmt(bottom)}" stroke="#000000"/>',
        f'<line x1="{_fmt(left)}" y1="{_fmt(top)}" x2="{_fmt(left)}" '
        f'y2="{_fmt(bottom)}" stroke="#000000"/>',
    ]
    for tv in ax.x_ticks():
        px = ax.px(tv)
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{_fmt(bottom)}" x2="{_fmt(px)}" '
            f'y2="{_fmt(bottom + 5)}" stroke="#000000"/>'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{_fmt(bottom + 18)}" text-anchor="middle" '
            f'font-family="monospace" font-size="10">{_fmt(tv)}</text>'
        )
    for tv in ax.y_ticks():
        py = ax.py(tv)
        parts.append(
            f'<line x1="{_fmt(left - 5)}" y1="{_fmt(py)}" x2="{_fmt(left)}" '
            f'y2="{_fmt(py)}" stroke="#000000"/>'
        )
        parts.append(
            f'<text x="{_fmt(left - 8)}" y="{_fmt(py + 3)}" text-anchor="end" '
            f'font-family="monospace" font-size="10">{_fmt(tv)}</text>'
        )
    parts.append(
        f'<text x="{_fmt((left + right) / 2)}" y="{_fmt(_HEIGHT - 14)}" '
        f'text-anchor="middle" font-family="monospace" font-size="12">'
        f'{_escape(x_label)}</text>'
    )
    parts.append(
        f'<text x="18" y="{_fmt((top + bottom) / 2)}" text-anchor="middle" '
        f'font-family="monospace" font-size="12" '
        f'transform="rotate(-90 18 {_fmt((top + bottom) / 2)})">{_escape(y_label)}</text>'
    )
    return parts


def _legend_svg(labels: Sequence[str]) -> list[str]:
    parts = []
    for i, label in enumerate(labels):
        y = _MARGIN_T + 12 + 16 * i
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(
            f'<rect x="{_fmt(_WIDTH - _MARGIN_R - 140)}" y="{_fmt(y - 8)}" '
            f'width="10" height="10" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{_fmt(_WIDTH - _MARGIN_R - 126)}" y="{_fmt(y + 1)}" '
            f'font-family="monospace" font-size="10">{_escape(label)}</text>'
        )
    return parts


def _data_ranges(series, log_x, log_y):
    xs, ys, dropped = [], [], 0
    for s in series:
        pairs, d = _finite_pairs(s, log_x, log_y)
        dropped += d
        xs.extend(p[0] for p in pairs)
        ys.extend(p[1] for p in pairs)
    if not xs:
        raise ValueError("no plottable points after removing off-scale values")
    pad = 0.05
    if log_x:
        lo, hi = min(xs), max(xs)
        x_range = (lo / 10**pad, hi * 10**pad)
    else:
        span = max(max(xs) - min(xs), 1e-12)
        x_range = (min(xs) - pad * span, max(xs) + pad * span)
    if log_y:
        lo, hi = min(ys), max(ys)
        y_range = (lo / 10**pad, hi * 10**pad)
    else:
        span = max(max(ys) - min(ys), 1e-12)
        y_range = (min(ys) - pad * span, max(ys) + pad * span)
    return x_range, y_range, dropped


def _note_svg(dropped: int) -> list[str]:
    if dropped == 0:
        return []
    return [
        f'<text x="{_fmt(_MARGIN_L + 4)}" y="{_fmt(_MARGIN_T - 6)}" '
        f'font-family="monospace" font-size="10" fill="#777777">'
        f'{dropped} off-scale point(s) omitted</text>'
    ]


def _chart(series, title, x_label, y_label, log_x, log_y, draw):
    """Shared frame: ranges, axes, legend, then per-chart drawing."""
    x_range, y_range, dropped = _data_ranges(series, log_x, log_y)
    ax = _Axes(x_range, y_range, log_x=log_x, log_y=log_y)
    parts = _svg_open(title)
    parts += _axes_svg(ax, x_label, y_label)
    parts += _note_svg(dropped)
    parts += draw(ax)
    parts += _legend_svg([s.label for s in series])
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_ratio_svg(
    series: Sequence[Series],
    title: str,
    x_label: str = "test sample",
    y_label: str = "reduction ratio vs baseline",
) -> str:
    """Point cloud of per-sample performance ratios with a unit guide line."""

    def draw(ax: _Axes):
        parts = []
        if ax.y0 <= 1.0 <= ax.y1:
            parts.append(
                f'<line x1="{_fmt(_MARGIN_L)}" y1="{_fmt(ax.py(1.0))}" '
                f'x2="{_fmt(_WIDTH - _MARGIN_R)}" y2="{_fmt(ax.py(1.0))}" '
                f'stroke="#999999" stroke-dasharray="4 3"/>'
            )
        for i, s in enumerate(series):
            color = _PALETTE[i % len(_PALETTE)]
            pairs, _ = _finite_pairs(s, False, False)
            for xv, yv in pairs:
                parts.append(
                    f'<circle cx="{_fmt(ax.px(xv))}" cy="{_fmt(ax.py(yv))}" '
                    f'r="2.5" fill="{color}" fill-opacity="0.7"/>'
                )
        return parts

    return _chart(series, title, x_label, y_label, False, False, draw)


def convergence_lines_svg(
    series: Sequence[Series],
    title: str,
    x_label: str = "iteration",
    y_label: str = "residual norm",
) -> str:
    """Residual-versus-iteration lines on a log-scaled vertical axis."""

    def draw(ax: _Axes):
        parts = []
        for i, s in enumerate(series):
            color = _PALETTE[i % len(_PALETTE)]
            pairs, _ = _finite_pairs(s, False, True)
            if not pairs:
                continue
            pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in pairs)
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"/>'
            )
            for xv, yv in pairs:
                parts.append(
                    f'<circle cx="{_fmt(ax.px(xv))}" cy="{_fmt(ax.py(yv))}" '
                    f'r="2" fill="{color}"/>'
                )
        return parts

    return _chart(series, title, x_label, y_label, False, True, draw)


def error_vs_h_svg(
    series: Sequence[Series],
    title: str,
    guide_slope: float | None = 4.0,
    x_label: str = "step size h",
    y_label: str = "one-step error",
) -> str:
    """Log-log error-versus-step chart with an optional reference slope."""

    def draw(ax: _Axes):
        parts = []
        if guide_slope is not None:
            # anchor the guide at the first finite point of the first series
            anchor = None
            for s in series:
                pairs, _ = _finite_pairs(s, True, True)
                if pairs:
                    anchor = pairs[0]
                    break
            if anchor is not None:
                x_lo, x_hi = 10.0**ax.x0, 10.0**ax.x1
                y_lo = anchor[1] * (x_lo / anchor[0]) ** guide_slope
                y_hi = anchor[1] * (x_hi / anchor[0]) ** guide_slope
                parts.append(
                    f'<line x1="{_fmt(ax.px(x_lo))}" y1="{_fmt(ax.py(y_lo))}" '
                    f'x2="{_fmt(ax.px(x_hi))}" y2="{_fmt(ax.py(y_hi))}" '
                    f'stroke="#999999" stroke-dasharray="4 3"/>'
                )
                parts.append(
                    f'<text x="{_fmt(ax.px(x_hi) - 4)}" y="{_fmt(ax.py(y_hi) - 6)}" '
                    f'text-anchor="end" font-family="monospace" font-size="10" '
                    f'fill="#777777">slope {_fmt(guide_slope)}</text>'
                )
        for i, s in enumerate(series):
            color = _PALETTE[i % len(_PALETTE)]
            pairs, _ = _finite_pairs(s, True, True)
            if not pairs:
                continue
            pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in pairs)
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"/>'
            )
            for xv, yv in pairs:
                parts.append(
                    f'<circle cx="{_fmt(ax.px(xv))}" cy="{_fmt(ax.py(yv))}" '
                    f'r="2" fill="{color}"/>'
                )
        return parts

    return _chart(series, title, x_label, y_label, True, True, draw)


def write_svg(path: str, content: str):
    with open(path, "w") as fh:
        fh.write(content)
