"""Hand-rolled SVG emission from already-written CSV rows.

Plots never compute: every function takes tabulated values and only maps
them to screen coordinates. Output is deterministic (fixed float
formatting, no timestamps), so re-runs are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 20, 40, 50
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#17becf", "#7f7f7f"]


def _f(v: float) -> str:
    return f"{v:.3f}"


class _Canvas:
    def __init__(self, title: str, comment: str = ""):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">']
        if comment:
            self.parts.append(f"<!-- {comment} -->")
        self.parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
        self.text(_W / 2, _MT / 2 + 6, title, size=15, anchor="middle")

    def text(self, x, y, s, size=11, anchor="start", rotate=None):
        extra = ""
        if rotate is not None:
            extra = f' transform="rotate({rotate} {_f(x)} {_f(y)})"'
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}"{extra}>{s}</text>')

    def line(self, x1, y1, x2, y2, color="#444", width=1.0):
        self.parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{color}" stroke-width="{width}"/>')

    def polyline(self, pts, color, width=1.5, opacity=1.0):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{_f(opacity)}"/>')

    def polygon(self, pts, color, opacity=0.6):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.parts.append(
            f'<polygon points="{coords}" fill="{color}" fill-opacity="{_f(opacity)}" '
            f'stroke="{color}"/>')

    def rect(self, x, y, w, h, color, opacity=0.35):
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{color}" fill-opacity="{_f(opacity)}"/>')

    def save(self, path):
        self.parts.append("</svg>")
        Path(path).write_text("\n".join(self.parts) + "\n")


class _Axes:
    """Maps data coordinates to the canvas plot area and draws the frame."""

    def __init__(self, canvas: _Canvas, x_range, y_range, xlabel="", ylabel=""):
        self.c = canvas
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        canvas.line(_ML, _H - _MB, _W - _MR, _H - _MB)
        canvas.line(_ML, _MT, _ML, _H - _MB)
        for i in range(5):
            fx = self.x0 + (self.x1 - self.x0) * i / 4
            fy = self.y0 + (self.y1 - self.y0) * i / 4
            px, py = self.map(fx, fy)
            canvas.line(px, _H - _MB, px, _H - _MB + 4)
            canvas.text(px, _H - _MB + 16, f"{fx:.3g}", anchor="middle", size=10)
            canvas.line(_ML - 4, py, _ML, py)
            canvas.text(_ML - 7, py + 3, f"{fy:.3g}", anchor="end", size=10)
        if xlabel:
            canvas.text((_ML + _W - _MR) / 2, _H - 12, xlabel, anchor="middle")
        if ylabel:
            canvas.text(16, (_MT + _H - _MB) / 2, ylabel, anchor="middle", rotate=-90)

    def map(self, x, y):
        px = _ML + (x - self.x0) / (self.x1 - self.x0) * (_W - _ML - _MR)
        py = _H - _MB - (y - self.y0) / (self.y1 - self.y0) * (_H - _MT - _MB)
        return px, py


def _legend(canvas: _Canvas, labels_colors):
    y = _MT + 8
    for label, color in labels_colors:
        canvas.line(_W - _MR - 150, y, _W - _MR - 130, y, color=color, width=2)
        canvas.text(_W - _MR - 124, y + 4, label, size=10)
        y += 16


def line_chart(series: dict[str, list[tuple[float, float]]], path, title: str,
               xlabel: str, ylabel: str, comment: str = "") -> None:
    """series maps label -> [(x, y), ...] already sorted by x."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    canvas = _Canvas(title, comment)
    pad = 0.05 * (max(ys) - min(ys) or 1.0)
    ax = _Axes(canvas, (min(xs), max(xs)), (min(ys) - pad, max(ys) + pad),
               xlabel, ylabel)
    pairs = []
    for i, (label, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pairs.append((label, color))
        if pts:
            canvas.polyline([ax.map(x, y) for x, y in pts], color, width=2)
    _legend(canvas, pairs)
    canvas.save(path)


def flow_path_chart(paths: dict[int, list[tuple[float, float]]], path, title: str,
                    comment: str = "") -> None:
    """Integration trajectories: denoising time on x, one coordinate on y."""
    ys = [y for pts in paths.values() for _, y in pts] or [0.0, 1.0]
    canvas = _Canvas(title, comment)
    pad = 0.05 * (max(ys) - min(ys) or 1.0)
    ax = _Axes(canvas, (0.0, 1.0), (min(ys) - pad, max(ys) + pad),
               "denoising time t", "action coordinate")
    for i, pts in sorted(paths.items()):
        color = _COLORS[i % len(_COLORS)]
        canvas.polyline([ax.map(x, y) for x, y in pts], color, width=1.2,
                        opacity=0.85)
    canvas.save(path)


def violin_chart(cells: list[dict], path, title: str, comment: str = "") -> None:
    """Beta-posterior violins: each cell has label, grid, density, mean.

    Width at height y is proportional to the posterior density; the
    horizontal tick marks the posterior mean.
    """
    canvas = _Canvas(title, comment)
    ax = _Axes(canvas, (0.0, max(len(cells), 1)), (0.0, 1.0), "", "success rate")
    max_density = max((max(c["density"]) for c in cells), default=1.0) or 1.0
    half = 0.38
    for i, cell in enumerate(cells):
        color = _COLORS[i % len(_COLORS)]
        center = i + 0.5
        left, right = [], []
        for y, d in zip(cell["grid"], cell["density"]):
            w = half * d / max_density
            left.append(ax.map(center - w, y))
            right.append(ax.map(center + w, y))
        canvas.polygon(left + right[::-1], color, opacity=0.5)
        mx0, my = ax.map(center - half, cell["mean"])
        mx1, _ = ax.map(center + half, cell["mean"])
        canvas.line(mx0, my, mx1, my, color="#000", width=1.4)
        px, _ = ax.map(center, 0.0)
        canvas.text(px, _H - _MB + 30, cell["label"], anchor="middle", size=10)
    canvas.save(path)
