import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.integrate import quad

from .advantage import interpolator
from .fitting import LMResult, finite_difference_jacobian, levenberg_marquardt
from .schemas import (
    AdvantageGrid,
    BoundaryFamily,
    BoundaryFit,
    Classification,
    Contour,
    Point,
    SEBands,
)

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]

AREA_TOLERANCE = 1e-3
MIN_POINTS = 5
SMALL_K = 1e-8

PARAM_NAMES: Dict[BoundaryFamily, Tuple[str, ...]] = {
    BoundaryFamily.LOGISTIC: ("q_min", "q_max", "k", "p0"),
    BoundaryFamily.EXPONENTIAL: ("c", "k"),
}


def logistic(
    p: npt.ArrayLike, q_min: float, q_max: float, k: float, p0: float
) -> Vector:
    """q_max as p -> -inf, q_min as p -> +inf, midpoint at p0."""
    z = np.clip(k * (np.asarray(p, dtype=np.float64) - p0), -700, 700)
    return q_min + (q_max - q_min) / (1.0 + np.exp(z))


def exponential(p: npt.ArrayLike, c: float, k: float) -> Vector:
    """c * (exp(k p) - 1) / (exp(k) - 1); passes (0, 0) and (1, c)."""
    p = np.asarray(p, dtype=np.float64)
    if abs(k) < SMALL_K:
        return c * p
    return c * np.expm1(k * p) / np.expm1(k)


def boundary_curve(fit: BoundaryFit) -> Callable[[npt.ArrayLike], Vector]:
    params = fit.params
    if fit.family == BoundaryFamily.LOGISTIC:
        return lambda p: logistic(
            p, params["q_min"], params["q_max"], params["k"], params["p0"]
        )
    return lambda p: exponential(p, params["c"], params["k"])


def _initial_guesses(
    family: BoundaryFamily, p: Vector, q: Vector
) -> List[List[float]]:
    order = np.argsort(p)
    low, high = float(q[order[0]]), float(q[order[-1]])
    if family == BoundaryFamily.LOGISTIC:
        mid = float(np.median(p))
        span = float(np.ptp(p)) or 1.0
        return [
            [high, low, k, p0]
            for k in (4.0 / span, 10.0 / span, 25.0 / span)
            for p0 in (mid, float(p.min()) + 0.25 * span, float(p.min()) + 0.75 * span)
        ]
    c0 = high if high != 0 else float(q.max()) or 1.0
    return [[c0, k] for k in (-3.0, 1.0, 3.0, 6.0)]


def _fit_family(
    family: BoundaryFamily, p: Vector, q: Vector
) -> Tuple[Optional[LMResult], Vector]:
    def residuals(theta: Vector) -> Vector:
        if family == BoundaryFamily.LOGISTIC:
            return logistic(p, *theta) - q
        return exponential(p, *theta) - q

    def jacobian(theta: Vector) -> Vector:
        return finite_difference_jacobian(residuals, theta)

    def valid(theta: Vector) -> bool:
        if family == BoundaryFamily.LOGISTIC:
            return bool(theta[2] > 0)
        return True

    best: Optional[LMResult] = None
    for guess in _initial_guesses(family, p, q):
        result = levenberg_marquardt(residuals, jacobian, guess, valid=valid)
        if not np.isfinite(result.x).all():
            continue
        if best is None or (result.converged, -result.cost) > (
            best.converged,
            -best.cost,
        ):
            best = result
    if best is None:
        return None, np.full_like(q, np.nan)
    return best, residuals(best.x)


def signed_area(curve: Callable[[npt.ArrayLike], Vector]) -> float:
    """Integral over p in [0, 1] of (q_fit(p) - p); positive above the diagonal."""
    value, _ = quad(lambda p: float(curve(p)) - p, 0.0, 1.0, limit=200)
    return float(value)


def classify(area: float) -> Classification:
    if area > AREA_TOLERANCE:
        return Classification.NOISE_INSENSITIVE
    if area < -AREA_TOLERANCE:
        return Classification.NOISE_SENSITIVE
    return Classification.BOUNDARY


def fit_boundary(
    contour: Union[Contour, Sequence[Point]], family: BoundaryFamily
) -> BoundaryFit:
    """Least-squares q(p) within `family`, classified against the diagonal."""
    points = contour.points if isinstance(contour, Contour) else list(contour)
    if len(points) < MIN_POINTS:
        message = f"need at least {MIN_POINTS} contour points, got {len(points)}"
        logger.warning(f"boundary fit failed: {message}")
        return BoundaryFit(
            family=family, n_points=len(points), success=False, message=message
        )

    p = np.array([point[0] for point in points], dtype=np.float64)
    q = np.array([point[1] for point in points], dtype=np.float64)
    result, residuals = _fit_family(family, p, q)
    rmse = float(np.sqrt(np.mean(residuals**2))) if result else float("nan")
    if result is None or not result.converged:
        message = result.message if result else "no finite solution"
        logger.warning(f"{family.value} boundary fit did not converge: {message}")
        params = {}
        if result is not None:
            params = dict(zip(PARAM_NAMES[family], map(float, result.x)))
        return BoundaryFit(
            family=family,
            params=params,
            rmse=rmse,
            n_points=len(points),
            success=False,
            message=message,
            residuals=residuals.tolist(),
        )

    fit = BoundaryFit(
        family=family,
        params=dict(zip(PARAM_NAMES[family], map(float, result.x))),
        rmse=rmse,
        n_points=len(points),
        residuals=residuals.tolist(),
    )
    fit.signed_area = signed_area(boundary_curve(fit))
    fit.classification = classify(fit.signed_area)
    logger.info(
        f"{family.value} boundary rmse {rmse:.4f} area {fit.signed_area:+.4f} "
        f"-> {fit.classification.value}"
    )
    return fit


def se_bands(
    fit: BoundaryFit,
    contour: Union[Contour, Sequence[Point]],
    grid: AdvantageGrid,
    level: float,
    n_points: int = 50,
) -> SEBands:
    """Offset the fitted boundary along q by +-level * SE(A) / |dA/dq|.

    The band is evaluated over the p-range of the contour; points where the
    local gradient vanishes are omitted.
    """
    points = contour.points if isinstance(contour, Contour) else list(contour)
    bands = SEBands(level=level)
    if not fit.success or not points:
        return bands

    p_values = [point[0] for point in points]
    p = np.linspace(min(p_values), max(p_values), n_points)
    q_low, q_high = grid.q_grid[0], grid.q_grid[-1]
    q = np.clip(boundary_curve(fit)(p), q_low, q_high)

    query = np.column_stack([p, q])
    se = interpolator(grid, grid.se_array)(query)
    slope = np.gradient(grid.mean_array, np.asarray(grid.q_grid), axis=1)
    gradient = np.abs(interpolator(grid, slope)(query))

    for pi, qi, se_i, grad_i in zip(p, q, se, gradient):
        if grad_i <= 1e-12:
            bands.omitted += 1
            continue
        offset = level * se_i / grad_i
        bands.lower.append((float(pi), float(qi - offset)))
        bands.upper.append((float(pi), float(qi + offset)))
    if bands.omitted:
        logger.warning(f"{bands.omitted} band points omitted for zero gradient")
    return bands
