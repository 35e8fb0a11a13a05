import logging
from collections import defaultdict
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import numpy.typing as npt

from app.base.exceptions import CustomException, ExType

from .fitting import fit_decay
from .schemas import QuantityPoint, QuantityStatus

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]

MIN_SIZES = 3
NOISE_SE = 2.0


def _size_curve(
    scores: Dict[float, List[float]]
) -> Tuple[Vector, Vector, Vector]:
    sizes = np.array(sorted(scores), dtype=np.float64)
    means = np.array([np.mean(scores[s]) for s in sorted(scores)])
    ses = np.array(
        [
            np.std(scores[s], ddof=1) / np.sqrt(len(scores[s]))
            if len(scores[s]) > 1
            else 0.0
            for s in sorted(scores)
        ]
    )
    return sizes, means, ses


def _non_monotone_warning(means: Vector, ses: Vector) -> Optional[str]:
    for k in range(1, means.size):
        best = int(np.argmax(means[:k]))
        drop = means[best] - means[k]
        if drop > NOISE_SE * float(np.hypot(ses[best], ses[k])):
            return (
                f"mean score falls by {drop:.4f} between sizes; beyond "
                f"{NOISE_SE:g} standard errors"
            )
    return None


def _interpolate_size(
    sizes: Vector, envelope: Vector, target: float
) -> float:
    """Smallest size where the monotone envelope reaches `target`, in log size."""
    k = int(np.argmax(envelope >= target))
    if k == 0:
        return float(sizes[0])
    lo, hi = envelope[k - 1], envelope[k]
    fraction = (target - lo) / (hi - lo)
    log_lo, log_hi = np.log(sizes[k - 1]), np.log(sizes[k])
    log_size = log_lo + fraction * (log_hi - log_lo)
    return float(np.exp(log_size))


def quantity_tradeoff(
    results: Mapping[Tuple[float, float, int], float], target: float
) -> List[QuantityPoint]:
    """Per corruption level, the smallest dataset size reaching `target`.

    `results` maps (p, size, seed) to a score. The asymptote comes from a
    decay fit of score against size / largest size.
    """
    by_p: Dict[float, Dict[float, List[float]]] = defaultdict(lambda: defaultdict(list))
    for (p, size, _), score in sorted(results.items()):
        by_p[p][size].append(score)

    summary = []
    for p in sorted(by_p):
        if len(by_p[p]) < MIN_SIZES:
            raise CustomException(
                code=ExType.VALIDATION_ERROR,
                field="size_grid",
                detail=f"p={p} has {len(by_p[p])} sizes; need at least {MIN_SIZES}",
            )
        sizes, means, ses = _size_curve(by_p[p])
        envelope = np.maximum.accumulate(means)
        warning = _non_monotone_warning(means, ses)
        if warning:
            logger.warning(f"p={p}: {warning}")

        largest = sizes[-1]
        fit = fit_decay(
            [
                (1.0 - size / largest, score)
                for size, values in by_p[p].items()
                for score in values
            ]
        )
        asymptote = fit.a if fit.success else float(envelope[-1])

        point = QuantityPoint(
            p=p,
            status=QuantityStatus.UNREACHABLE,
            asymptote=asymptote,
            sizes=sizes.tolist(),
            means=means.tolist(),
            ses=ses.tolist(),
            warning=warning,
        )
        if envelope[-1] >= target:
            point.status = QuantityStatus.REACHED
            point.required_size = _interpolate_size(sizes, envelope, target)
        elif fit.success and asymptote > target:
            x = -np.log(1.0 - target / fit.a) / fit.lam
            point.status = QuantityStatus.EXTRAPOLATED
            point.required_size = float(x * largest)
        summary.append(point)
        logger.info(f"p={p}: {point.status.value} {point.required_size}")
    return summary
