import logging
from collections import defaultdict
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy.interpolate import RegularGridInterpolator

from app.base.exceptions import CustomException, ExType

from .schemas import AdvantageGrid, Contour, Point

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]
Segment = Tuple[Edge, Edge]

# Corner order: (i, j), (i+1, j), (i+1, j+1), (i, j+1); bit 3 is corner 0.
MARCHING_SQUARES_TABLE: Dict[int, List[Segment]] = {
    0b0000: [],
    0b0001: [((0, 3), (2, 3))],
    0b0010: [((1, 2), (2, 3))],
    0b0011: [((0, 3), (1, 2))],
    0b0100: [((0, 1), (1, 2))],
    0b0110: [((0, 1), (2, 3))],
    0b0111: [((0, 1), (0, 3))],
    0b1000: [((0, 1), (0, 3))],
    0b1001: [((0, 1), (2, 3))],
    0b1011: [((0, 1), (1, 2))],
    0b1100: [((0, 3), (1, 2))],
    0b1101: [((1, 2), (2, 3))],
    0b1110: [((0, 3), (2, 3))],
    0b1111: [],
}
# Saddles: (segments when the cell average is non-positive, when positive).
SADDLES: Dict[int, Tuple[List[Segment], List[Segment]]] = {
    0b0101: (
        [((0, 1), (1, 2)), ((0, 3), (2, 3))],
        [((0, 1), (0, 3)), ((1, 2), (2, 3))],
    ),
    0b1010: (
        [((0, 1), (0, 3)), ((1, 2), (2, 3))],
        [((0, 1), (1, 2)), ((0, 3), (2, 3))],
    ),
}

KEY_DIGITS = 9


def _standard_error(values: Sequence[float]) -> Tuple[float, float]:
    array = np.asarray(values, dtype=np.float64)
    if array.size < 2:
        return float(array.mean()), 0.0
    return float(array.mean()), float(array.std(ddof=1) / np.sqrt(array.size))


def advantage_grid(
    scores_with: Mapping[Tuple[float, float, int], float],
    scores_without: Mapping[Tuple[float, int], float],
) -> AdvantageGrid:
    """Per-cell mean and SE of A(p, q) = S_imputed(p, q) - S_plain(p).

    Keys are (p, q, seed) and (p, seed). The two score sets come from
    independent runs, so their variances add.
    """
    with_cells: Dict[Tuple[float, float], List[float]] = defaultdict(list)
    for (p, q, _), score in sorted(scores_with.items()):
        with_cells[(p, q)].append(score)
    without_cells: Dict[float, List[float]] = defaultdict(list)
    for (p, _), score in sorted(scores_without.items()):
        without_cells[p].append(score)

    p_grid = sorted({p for p, _ in with_cells})
    q_grid = sorted({q for _, q in with_cells})
    if p_grid != sorted(without_cells):
        raise CustomException(
            code=ExType.GRID_MISMATCH,
            field="p_grid",
            detail=f"Imputed runs cover p={p_grid}, "
            f"plain runs p={sorted(without_cells)}",
        )
    missing = [(p, q) for p in p_grid for q in q_grid if (p, q) not in with_cells]
    if missing:
        raise CustomException(
            code=ExType.GRID_MISMATCH,
            field="q_grid",
            detail=f"No imputed scores for cells {missing}",
        )

    mean = np.zeros((len(p_grid), len(q_grid)))
    se = np.zeros_like(mean)
    for i, p in enumerate(p_grid):
        base_mean, base_se = _standard_error(without_cells[p])
        for j, q in enumerate(q_grid):
            cell_mean, cell_se = _standard_error(with_cells[(p, q)])
            mean[i, j] = cell_mean - base_mean
            se[i, j] = float(np.hypot(cell_se, base_se))

    n_seeds = min(len(v) for v in [*with_cells.values(), *without_cells.values()])
    if n_seeds < 2:
        logger.warning("fewer than 2 seeds per cell; standard errors reported as 0")
    return AdvantageGrid(
        p_grid=p_grid,
        q_grid=q_grid,
        mean=mean.tolist(),
        se=se.tolist(),
        n_seeds=n_seeds,
    )


def interpolator(
    grid: AdvantageGrid, values: npt.NDArray[np.float64]
) -> RegularGridInterpolator:
    return RegularGridInterpolator(
        (np.asarray(grid.p_grid), np.asarray(grid.q_grid)),
        values,
        method="linear",
        bounds_error=False,
        fill_value=None,
    )


def bilinear(grid: AdvantageGrid, points: Sequence[Point]) -> npt.NDArray[np.float64]:
    """Bilinear interpolant of the mean advantage at (p, q) points."""
    return np.asarray(interpolator(grid, grid.mean_array)(np.asarray(points)))


def _lerp(p0: Point, p1: Point, v0: float, v1: float) -> Point:
    t = min(max(v0 / (v0 - v1), 0.0), 1.0)
    return (p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1]))


def contour_segments(grid: AdvantageGrid) -> List[Tuple[Point, Point]]:
    values = grid.mean_array
    p, q = grid.p_grid, grid.q_grid
    segments = []
    for i in range(len(p) - 1):
        for j in range(len(q) - 1):
            cell = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            corners = [(p[a], q[b]) for a, b in cell]
            samples = [float(values[a, b]) for a, b in cell]
            index = sum(1 << (3 - k) for k, v in enumerate(samples) if v > 0)
            if index in SADDLES:
                edges = SADDLES[index][int(np.mean(samples) > 0)]
            else:
                edges = MARCHING_SQUARES_TABLE[index]
            for (a0, a1), (b0, b1) in edges:
                start = _lerp(corners[a0], corners[a1], samples[a0], samples[a1])
                end = _lerp(corners[b0], corners[b1], samples[b0], samples[b1])
                if start != end:
                    segments.append((start, end))
    return segments


def _key(point: Point) -> Tuple[float, float]:
    return (round(point[0], KEY_DIGITS), round(point[1], KEY_DIGITS))


def link_segments(segments: Sequence[Tuple[Point, Point]]) -> List[List[Point]]:
    """Chain segments sharing endpoints into polylines."""
    neighbours: Dict[Tuple[float, float], List[int]] = defaultdict(list)
    for index, (start, end) in enumerate(segments):
        neighbours[_key(start)].append(index)
        neighbours[_key(end)].append(index)

    used = [False] * len(segments)
    polylines = []
    for first in range(len(segments)):
        if used[first]:
            continue
        used[first] = True
        line = list(segments[first])
        for forward in (True, False):
            while True:
                tip = line[-1] if forward else line[0]
                nxt = next((k for k in neighbours[_key(tip)] if not used[k]), None)
                if nxt is None:
                    break
                used[nxt] = True
                start, end = segments[nxt]
                other = end if _key(start) == _key(tip) else start
                if forward:
                    line.append(other)
                else:
                    line.insert(0, other)
        polylines.append(line)
    return polylines


def arc_length(line: Sequence[Point]) -> float:
    array = np.asarray(line)
    return float(np.linalg.norm(np.diff(array, axis=0), axis=1).sum())


def zero_contour(grid: AdvantageGrid) -> Contour:
    """Longest polyline of the A = 0 level set by marching squares."""
    values = grid.mean_array
    if not ((values > 0).any() and (values <= 0).any()):
        logger.warning("advantage grid has a single sign; no zero contour")
        return Contour(message="no sign change")
    polylines = link_segments(contour_segments(grid))
    if not polylines:
        return Contour(message="no sign change")
    longest = max(polylines, key=arc_length)
    return Contour(points=longest, n_polylines=len(polylines))
