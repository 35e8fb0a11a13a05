import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from app.base.exceptions import CustomException, ExType

from .schemas import DecayFit

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]

LM_DAMPING = 1e-3
LM_MAX_ITER = 200
LM_TOL = 1e-10
MAX_DAMPING = 1e16


@dataclass
class LMResult:
    x: Vector
    cost: float
    iterations: int
    converged: bool
    message: str


def levenberg_marquardt(
    residuals: Callable[[Vector], Vector],
    jacobian: Callable[[Vector], Vector],
    x0: Sequence[float],
    valid: Optional[Callable[[Vector], bool]] = None,
    max_iter: int = LM_MAX_ITER,
    tol: float = LM_TOL,
    damping: float = LM_DAMPING,
) -> LMResult:
    """Minimize 0.5 * |r(x)|^2 with diagonal (Marquardt) damping.

    Damping is divided by 10 after an accepted step and multiplied by 10
    after a rejected one. Steps into an invalid region count as rejected.
    """
    x = np.asarray(x0, dtype=np.float64)
    r = residuals(x)
    cost = 0.5 * float(r @ r)
    mu = damping
    for iteration in range(1, max_iter + 1):
        J = jacobian(x)
        A = J.T @ J
        g = J.T @ r
        scale = np.maximum(np.diag(A), 1e-12)
        accepted = False
        while mu < MAX_DAMPING:
            try:
                step = np.linalg.solve(A + mu * np.diag(scale), -g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            candidate = x + step
            if valid is None or valid(candidate):
                r_new = residuals(candidate)
                cost_new = 0.5 * float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new <= cost:
                    accepted = True
                    break
            mu *= 10
        if not accepted:
            # No descent left at working precision means a stationary point.
            bound = 1e-8 * np.linalg.norm(J) * np.linalg.norm(r)
            stationary = np.linalg.norm(g) <= bound
            converged = cost < 1e-24 or bool(stationary)
            message = "converged" if converged else "damping exhausted"
            return LMResult(x, cost, iteration, converged, message)

        x, r, cost = candidate, r_new, cost_new
        mu = max(mu / 10, 1e-15)
        if np.linalg.norm(step) <= tol * (np.linalg.norm(x) + tol):
            return LMResult(x, cost, iteration, True, "converged")
    return LMResult(x, cost, max_iter, False, f"no convergence in {max_iter} steps")


def decay_model(p: npt.ArrayLike, a: float, lam: float) -> Vector:
    return a * -np.expm1(-lam * (1.0 - np.asarray(p, dtype=np.float64)))


def decay_curve(fit: DecayFit, p: npt.ArrayLike) -> Vector:
    return decay_model(p, fit.a, fit.lam)


def clean_score(fit: DecayFit) -> float:
    """Fitted score without corruption, S0 = a * (1 - exp(-lam))."""
    return float(decay_model(0.0, fit.a, fit.lam))


def marginal_utility(fit: DecayFit, p: float) -> float:
    """dS/dx at x = 1 - p: a * lam * exp(-lam * x)."""
    return float(fit.a * fit.lam * np.exp(-fit.lam * (1.0 - p)))


def r_squared(
    points: Sequence[Tuple[float, float]], predictor: Callable[[float], float]
) -> float:
    if len(points) < 2:
        raise CustomException(
            code=ExType.FIT_FAILURE, detail="R^2 needs at least 2 points"
        )
    x = np.array([point[0] for point in points], dtype=np.float64)
    y = np.array([point[1] for point in points], dtype=np.float64)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise CustomException(
            code=ExType.FIT_FAILURE, detail="R^2 is undefined for constant scores"
        )
    predicted = np.array([predictor(float(value)) for value in x])
    return 1.0 - float(np.sum((y - predicted) ** 2)) / ss_tot


def _decay_failure(n: int, message: str) -> DecayFit:
    logger.warning(f"decay fit failed: {message}")
    return DecayFit(n_points=n, success=False, message=message)


def fit_decay(points: Sequence[Tuple[float, float]]) -> DecayFit:
    """Least-squares fit of S = a * (1 - exp(-lam * (1 - p))) from (p, S) pairs."""
    n = len(points)
    p = np.array([point[0] for point in points], dtype=np.float64)
    s = np.array([point[1] for point in points], dtype=np.float64)
    if n < 4:
        return _decay_failure(n, f"need at least 4 points, got {n}")
    if np.unique(p).size < 3:
        return _decay_failure(n, "need at least 3 distinct corruption levels")
    if np.ptp(s) == 0:
        return _decay_failure(n, "all scores are equal")

    x = 1.0 - p

    def residuals(theta: Vector) -> Vector:
        return decay_model(p, theta[0], theta[1]) - s

    def jacobian(theta: Vector) -> Vector:
        a, lam = theta
        decay = np.exp(-lam * x)
        return np.column_stack([1.0 - decay, a * x * decay])

    result = levenberg_marquardt(
        residuals, jacobian, [float(s.max()), 3.0], valid=lambda t: bool(t[1] > 0)
    )
    a, lam = (float(v) for v in result.x)
    if not result.converged or not np.isfinite(result.x).all():
        fit = _decay_failure(n, result.message)
        fit.a, fit.lam, fit.iterations = a, lam, result.iterations
        return fit

    ss_res = 2.0 * result.cost
    ss_tot = float(np.sum((s - s.mean()) ** 2))
    fit = DecayFit(
        a=a,
        lam=lam,
        r2=1.0 - ss_res / ss_tot,
        residual_se=float(np.sqrt(ss_res / max(n - 2, 1))),
        n_points=n,
        iterations=result.iterations,
    )
    logger.debug(f"decay fit a={a:.4f} lam={lam:.4f} R2={fit.r2:.4f}")
    return fit


def finite_difference_jacobian(
    residuals: Callable[[Vector], Vector], theta: Vector, h: float = 1e-7
) -> Vector:
    columns = []
    for k in range(theta.size):
        step = np.zeros_like(theta)
        step[k] = h * max(abs(theta[k]), 1.0)
        delta = residuals(theta + step) - residuals(theta - step)
        columns.append(delta / (2 * step[k]))
    return np.column_stack(columns)
