import logging
import math
from typing import Tuple

import numpy as np
import numpy.typing as npt

from app.sim.environment import SignalEnv
from app.sim.models import N_CELLS, N_LANES, OCCUPANCY_SIZE, Observation

from .schemas import MISSING

logger = logging.getLogger(__name__)

Tokens = npt.NDArray[np.int64]
Rewards = npt.NDArray[np.float64]


def apply_vehicle_missing(env: SignalEnv) -> Observation:
    """Observation built from equipped vehicles only.

    Equipment is drawn once per vehicle at spawn with probability 1 - p
    (`SignalEnv.miss_ratio`), so a vehicle stays invisible for its lifetime.
    """
    return env.observe(equipped_only=True)


def apply_cell_noise(
    observation: Observation,
    reward: npt.ArrayLike,
    p: float,
    rng: np.random.Generator,
) -> Tuple[Observation, Rewards]:
    """Rewrite occupancy cells and step rewards, each with probability p.

    `reward` is one step reward or the per-second rewards of a decision; the
    result keeps its shape. Rewritten rewards are uniform on [-1, 1].
    """
    noisy = observation.copy()
    replaced = rng.random(OCCUPANCY_SIZE) < p
    values = (rng.random(OCCUPANCY_SIZE) < 0.5).astype(np.float64)
    noisy[:OCCUPANCY_SIZE] = np.where(replaced, values, observation[:OCCUPANCY_SIZE])

    rewards = np.asarray(reward, dtype=np.float64)
    rewritten = rng.random(rewards.shape) < p
    draws = rng.uniform(-1.0, 1.0, size=rewards.shape)
    return noisy, np.where(rewritten, draws, rewards)


def mask_cutoff(p: float) -> int:
    # Rounding first keeps (1 - 0.3) * 80 from landing on 56.000000000000014.
    return int(math.ceil(round((1.0 - p) * N_CELLS, 9)))


def apply_mask_region(observation: Observation, p: float) -> Observation:
    masked = observation.copy()
    occupancy = masked[:OCCUPANCY_SIZE].reshape(N_LANES, N_CELLS)
    occupancy[:, mask_cutoff(p) :] = 0.0
    return masked


def apply_token_missing(tokens: Tokens, p: float, rng: np.random.Generator) -> Tokens:
    tokens = np.asarray(tokens, dtype=np.int64)
    missing = rng.random(tokens.shape) < p
    return np.where(missing, MISSING, tokens)


def apply_token_noise(
    tokens: Tokens, p: float, rng: np.random.Generator, vocab_size: int
) -> Tokens:
    """Replace each token with a uniform vocabulary draw with probability p."""
    tokens = np.asarray(tokens, dtype=np.int64)
    replaced = rng.random(tokens.shape) < p
    return np.where(replaced, rng.integers(0, vocab_size, size=tokens.shape), tokens)
