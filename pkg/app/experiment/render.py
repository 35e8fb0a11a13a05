import logging
import math
from enum import Enum
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.analysis.boundary import boundary_curve
from app.analysis.fitting import decay_curve
from app.analysis.schemas import (
    AdvantageGrid,
    BoundaryFit,
    Contour,
    DecayFit,
    Point,
    QuantityPoint,
    SEBands,
)

from .svg import SVG, Pixel

logger = logging.getLogger(__name__)

WIDTH = 640
HEIGHT = 440
PLOT_BOX = (70.0, 40.0, 520.0, 380.0)
PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)
POSITIVE_RGB = (178, 24, 43)
NEGATIVE_RGB = (33, 102, 172)
NO_SIGN_CHANGE = "no sign change"
TICK_STYLE = 'text-anchor="middle" font-size="11"'


class PlotKind(str, Enum):
    DECAY = "decay"
    HEATMAP = "heatmap"
    BOUNDARY = "boundary"
    QUANTITY = "quantity"
    TRAINING_CURVES = "training_curves"


class Axes:
    """Maps data coordinates into the plot box; y grows upwards."""

    def __init__(
        self,
        x_range: Tuple[float, float],
        y_range: Tuple[float, float],
        box: Tuple[float, float, float, float] = PLOT_BOX,
        log_x: bool = False,
    ):
        self.log_x = log_x
        self.x_range = _padded((self._x_value(x_range[0]), self._x_value(x_range[1])))
        self.y_range = _padded(y_range)
        self.box = box

    def _x_value(self, value: float) -> float:
        return math.log10(value) if self.log_x else value

    def _x_pixel(self, scaled: float) -> float:
        lo, hi = self.x_range
        x1, _, x2, _ = self.box
        return x1 + (scaled - lo) / (hi - lo) * (x2 - x1)

    def x(self, value: float) -> float:
        return self._x_pixel(self._x_value(value))

    def y(self, value: float) -> float:
        lo, hi = self.y_range
        _, y1, _, y2 = self.box
        return y2 - (value - lo) / (hi - lo) * (y2 - y1)

    def point(self, point: Point) -> Pixel:
        return (self.x(point[0]), self.y(point[1]))

    def invert(self, pixel: Pixel) -> Point:
        x1, y1, x2, y2 = self.box
        (xlo, xhi), (ylo, yhi) = self.x_range, self.y_range
        x = xlo + (pixel[0] - x1) / (x2 - x1) * (xhi - xlo)
        y = ylo + (y2 - pixel[1]) / (y2 - y1) * (yhi - ylo)
        return (10**x if self.log_x else x, y)

    def draw(self, svg: SVG, title: str, x_label: str, y_label: str) -> None:
        x1, y1, x2, y2 = self.box
        svg.filled_rectangle(x1, y1, x2, y2, "none", 'stroke="black"')
        for value in np.linspace(*self.x_range, 6):
            x = self._x_pixel(float(value))
            label = 10**value if self.log_x else value
            svg.line((x, y2), (x, y2 + 5))
            svg.string(x, y2 + 18, f"{label:.3g}", TICK_STYLE)
        for value in np.linspace(*self.y_range, 6):
            y = self.y(float(value))
            svg.line((x1 - 5, y), (x1, y))
            svg.string(x1 - 8, y + 4, f"{value:.3g}", 'text-anchor="end"')
        svg.string((x1 + x2) / 2, 24, title, 'text-anchor="middle" font-size="15"')
        svg.string((x1 + x2) / 2, y2 + 40, x_label, 'text-anchor="middle"')
        svg.string(
            18,
            (y1 + y2) / 2,
            y_label,
            f'text-anchor="middle" transform="rotate(-90 18 {(y1 + y2) / 2:.1f})"',
        )


def _padded(bounds: Tuple[float, float]) -> Tuple[float, float]:
    lo, hi = float(bounds[0]), float(bounds[1])
    if hi - lo < 1e-12:
        return (lo - 0.5, hi + 0.5)
    return (lo, hi)


def _score_range(values: Sequence[float]) -> Tuple[float, float]:
    lo, hi = min(0.0, *values), max(0.0, *values)
    return (lo, hi + 0.05 * (hi - lo))


def diverging_color(value: float, limit: float) -> str:
    """White at zero, red for positive and blue for negative values."""
    t = min(abs(value) / limit, 1.0) if limit > 0 else 0.0
    rgb = POSITIVE_RGB if value > 0 else NEGATIVE_RGB
    r, g, b = (round(255 + t * (c - 255)) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def _cell_edges(values: Sequence[float]) -> List[float]:
    grid = np.asarray(values, dtype=np.float64)
    middle = (grid[1:] + grid[:-1]) / 2
    first = grid[0] - (middle[0] - grid[0])
    last = grid[-1] + (grid[-1] - middle[-1])
    return [float(first), *middle.tolist(), float(last)]


def render_empty(title: str, message: str, manifest: str = "") -> str:
    svg = SVG()
    svg.header(WIDTH, HEIGHT, manifest)
    svg.string(WIDTH / 2, 24, title, 'text-anchor="middle" font-size="15"')
    svg.string(
        WIDTH / 2, HEIGHT / 2, message, 'text-anchor="middle" class="placeholder"'
    )
    return svg.get_svg()


def render_decay(
    points: Sequence[Point],
    fit: DecayFit,
    manifest: str = "",
    title: str = "Score vs corruption ratio",
) -> str:
    if not points:
        return render_empty(title, "no results to plot", manifest)
    scores = [s for _, s in points]
    axes = Axes((0.0, 1.0), _score_range(scores))
    svg = SVG()
    svg.header(WIDTH, HEIGHT, manifest)
    axes.draw(svg, title, "corruption ratio p", "score")
    for point in points:
        svg.circle(axes.point(point), 3, PALETTE[0])
    if fit.success:
        p = np.linspace(0.0, 1.0, 101)
        curve = decay_curve(fit, p)
        svg.polyline(
            [axes.point((a, b)) for a, b in zip(p, curve)], PALETTE[3], extra='id="fit"'
        )
        note = f"a={fit.a:.3f}  λ={fit.lam:.3f}  R²={fit.r2:.3f}"
    else:
        note = f"fit failed: {fit.message}"
    svg.string(PLOT_BOX[2] - 10, PLOT_BOX[1] + 20, note, 'text-anchor="end"')
    return svg.get_svg()


def _draw_boundary(
    svg: SVG,
    axes: Axes,
    contour: Contour,
    fit: Optional[BoundaryFit],
    bands: Sequence[SEBands],
) -> None:
    svg.line(
        axes.point((0.0, 0.0)),
        axes.point((1.0, 1.0)),
        "#999999",
        extra='stroke-dasharray="4 4" id="diagonal"',
    )
    svg.polyline(
        [axes.point(point) for point in contour.points], "black", extra='id="contour"'
    )
    if fit is not None and fit.success and contour.points:
        p_values = [point[0] for point in contour.points]
        p = np.linspace(min(p_values), max(p_values), 101)
        q = boundary_curve(fit)(p)
        svg.polyline(
            [axes.point((a, b)) for a, b in zip(p, q)],
            PALETTE[2],
            2.0,
            'stroke-dasharray="8 3" id="boundary"',
        )
    for band in bands:
        dash = "2 2" if band.level < 1.5 else "1 4"
        for side in (band.lower, band.upper):
            svg.polyline(
                [axes.point(point) for point in side],
                "#555555",
                1.0,
                f'stroke-dasharray="{dash}" class="band-{band.level:g}"',
            )


def _legend(svg: SVG, lines: Sequence[str]) -> None:
    x = PLOT_BOX[2] + 15
    for k, line in enumerate(lines):
        svg.string(x, PLOT_BOX[1] + 15 + 16 * k, line, 'font-size="11"')


def render_heatmap(
    grid: AdvantageGrid,
    contour: Contour,
    fit: Optional[BoundaryFit] = None,
    bands: Sequence[SEBands] = (),
    manifest: str = "",
    title: str = "Imputation advantage",
) -> str:
    p_edges, q_edges = _cell_edges(grid.p_grid), _cell_edges(grid.q_grid)
    axes = Axes((p_edges[0], p_edges[-1]), (q_edges[0], q_edges[-1]))
    values = grid.mean_array
    limit = float(np.abs(values).max())

    svg = SVG()
    svg.header(WIDTH, HEIGHT, manifest)
    svg.group_start({"id": "cells"})
    for i in range(len(grid.p_grid)):
        for j in range(len(grid.q_grid)):
            svg.filled_rectangle(
                axes.x(p_edges[i]),
                axes.y(q_edges[j + 1]),
                axes.x(p_edges[i + 1]),
                axes.y(q_edges[j]),
                diverging_color(float(values[i, j]), limit),
            )
    svg.group_end()
    axes.draw(svg, title, "corruption ratio p", "imputation noise q")
    _draw_boundary(svg, axes, contour, fit, bands)

    legend = [f"A max {limit:.3g}", f"seeds {grid.n_seeds}"]
    if contour.empty:
        legend.append(contour.message or NO_SIGN_CHANGE)
    elif fit is not None:
        legend.append(f"boundary {fit.family.value}")
        if fit.classification is not None:
            legend.append(fit.classification.value)
    for band in bands:
        legend.append(f"±{band.level:g} SE ({band.method})")
    _legend(svg, legend)
    return svg.get_svg()


def render_boundary(
    contour: Contour,
    fit: Optional[BoundaryFit] = None,
    bands: Sequence[SEBands] = (),
    manifest: str = "",
    title: str = "Decision boundary",
) -> str:
    if contour.empty:
        return render_empty(title, contour.message or NO_SIGN_CHANGE, manifest)
    axes = Axes((0.0, 1.0), (0.0, 1.0))
    svg = SVG()
    svg.header(WIDTH, HEIGHT, manifest)
    axes.draw(svg, title, "corruption ratio p", "imputation noise q")
    for point in contour.points:
        svg.circle(axes.point(point), 2, "black")
    _draw_boundary(svg, axes, contour, fit, bands)
    legend = []
    if fit is not None:
        legend.append(f"{fit.family.value} rmse {fit.rmse:.3g}")
        if fit.success:
            legend.append(f"area {fit.signed_area:+.3f}")
        if fit.classification is not None:
            legend.append(fit.classification.value)
    _legend(svg, legend)
    return svg.get_svg()


def render_quantity(
    points: Sequence[QuantityPoint],
    benchmark: Optional[float] = None,
    manifest: str = "",
    title: str = "Score vs dataset size",
) -> str:
    series = [point for point in points if point.sizes]
    if not series:
        return render_empty(title, "no results to plot", manifest)
    sizes = [size for point in series for size in point.sizes]
    means = [mean for point in series for mean in point.means]
    if benchmark is not None:
        means.append(benchmark)
    axes = Axes(
        (min(sizes), max(sizes)),
        _score_range(means),
        log_x=True,
    )
    svg = SVG()
    svg.header(WIDTH, HEIGHT, manifest)
    axes.draw(svg, title, "dataset size", "score")
    if benchmark is not None:
        svg.line(
            (PLOT_BOX[0], axes.y(benchmark)),
            (PLOT_BOX[2], axes.y(benchmark)),
            "black",
            extra='stroke-dasharray="6 4" id="benchmark"',
        )
    legend = []
    for k, point in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        svg.polyline(
            [axes.point(xy) for xy in zip(point.sizes, point.means)], color
        )
        for size, mean, se in zip(point.sizes, point.means, point.ses):
            low, high = axes.point((size, mean - se)), axes.point((size, mean + se))
            svg.line(low, high, color)
            svg.circle(axes.point((size, mean)), 3, color)
        legend.append(f"p={point.p:g}: {point.status.value}")
    if benchmark is not None:
        legend.append("dashed: clean data")
    _legend(svg, legend)
    return svg.get_svg()


def render_training_curves(
    curves: Mapping[str, Sequence[float]],
    manifest: str = "",
    title: str = "Training return per episode",
) -> str:
    series = {label: values for label, values in curves.items() if values}
    if not series:
        return render_empty(title, "no training curves recorded", manifest)
    values = [v for curve in series.values() for v in curve]
    longest = max(len(curve) for curve in series.values())
    axes = Axes((1.0, float(max(longest, 2))), (min(values), max(values)))
    svg = SVG()
    svg.header(WIDTH, HEIGHT, manifest)
    axes.draw(svg, title, "episode", "return")
    for k, label in enumerate(sorted(series)):
        curve = series[label]
        color = PALETTE[k % len(PALETTE)]
        svg.polyline(
            [axes.point((e, r)) for e, r in enumerate(curve, start=1)], color
        )
    _legend(svg, sorted(series))
    return svg.get_svg()


def write_svg(path: Path, content: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content)
    logger.info(f"wrote {path}")
    return path
