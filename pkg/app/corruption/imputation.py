import logging
from typing import Optional

import numpy as np
import numpy.typing as npt

from app.base.exceptions import CustomException, ExType
from app.sim.models import N_CELLS, N_LANES, OCCUPANCY_SIZE, Observation

from .schemas import MISSING

logger = logging.getLogger(__name__)


def impute_artificial_exact(
    corrupted: npt.NDArray[np.generic],
    original: npt.NDArray[np.generic],
    q: float,
    rng: np.random.Generator,
    n_values: int,
    candidates: Optional[npt.NDArray[np.bool_]] = None,
) -> npt.NDArray[np.generic]:
    """Fill every candidate slot with the original value, or with probability q
    a uniform random value from range(n_values).

    Candidates default to the slots holding the MISSING sentinel.
    """
    corrupted = np.asarray(corrupted)
    original = np.asarray(original)
    if corrupted.shape != original.shape:
        raise CustomException(
            code=ExType.MISALIGNED_INPUT,
            detail=f"Corrupted shape {corrupted.shape} != original {original.shape}",
        )
    if candidates is None:
        candidates = corrupted == MISSING
    elif candidates.shape != corrupted.shape:
        raise CustomException(
            code=ExType.MISALIGNED_INPUT,
            detail=f"Candidate mask shape {candidates.shape} != {corrupted.shape}",
        )

    noisy = rng.random(corrupted.shape) < q
    random_values = rng.integers(0, n_values, size=corrupted.shape)
    filled = np.where(noisy, random_values, original).astype(corrupted.dtype)
    return np.where(candidates, filled, corrupted)


def impute_context_fill(
    observation: Observation, window: int, threshold: int
) -> Observation:
    """Mark an empty cell occupied when enough same-lane neighbours are occupied.

    Neighbours are the `window` cells on each side. Near a lane end the
    threshold shrinks to ceil(threshold * available / (2 * window)). All
    decisions read the input, so filled cells never trigger further fills.
    """
    occupancy = observation[:OCCUPANCY_SIZE].reshape(N_LANES, N_CELLS)
    padded = np.pad(occupancy, ((0, 0), (window, window)))
    inside = np.pad(np.ones_like(occupancy), ((0, 0), (window, window)))

    counts = np.zeros_like(occupancy)
    available = np.zeros_like(occupancy)
    for offset in range(-window, window + 1):
        if offset == 0:
            continue
        start = window + offset
        counts += padded[:, start : start + N_CELLS]
        available += inside[:, start : start + N_CELLS]

    span = 2 * window
    required = (threshold * available.astype(np.int64) + span - 1) // span
    fill = (occupancy == 0) & (available > 0) & (counts >= required)

    imputed = observation.copy()
    imputed[:OCCUPANCY_SIZE] = np.where(fill, 1.0, occupancy).reshape(-1)
    return imputed
