import logging
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from app.base.exceptions import CustomException, ExType
from app.base.utils.rng import derive_seed, make_rng
from app.sim.environment import SignalEnv
from app.sim.models import OCCUPANCY_SIZE, Observation

from .imputation import impute_artificial_exact, impute_context_fill
from .operators import (
    Rewards,
    apply_cell_noise,
    apply_mask_region,
    apply_vehicle_missing,
)
from .schemas import (
    SIGNAL_KINDS,
    CorruptionKind,
    CorruptionSpec,
    ImputationMethod,
    ImputationSpec,
)

logger = logging.getLogger(__name__)


class ObservationChannel:
    """What the agent sees of a SignalEnv: corrupted, then imputed.

    The environment itself is never modified; rewards are corrupted only
    under cell noise.
    """

    def __init__(self, corruption: CorruptionSpec, imputation: ImputationSpec):
        if corruption.kind not in SIGNAL_KINDS:
            raise CustomException(
                code=ExType.VALIDATION_ERROR,
                field="corruption.kind",
                detail=f"{corruption.kind.value} does not apply to the signal task",
            )
        self.corruption = corruption
        self.imputation = imputation
        self.corruption_rng = make_rng(corruption.seed)
        self.imputation_rng = make_rng(imputation.seed)

    def env_kwargs(self, episode: int = 0) -> Dict[str, Any]:
        """Detection settings a SignalEnv needs for vehicle-missing corruption."""
        if self.corruption.kind == CorruptionKind.VEHICLE_MISSING:
            return {
                "miss_ratio": self.corruption.p,
                "detection_seed": derive_seed(self.corruption.seed, episode),
            }
        return {}

    def observe(self, env: SignalEnv) -> Observation:
        """View of the current state before any reward, e.g. after reset."""
        observation, _ = self.view(env, [])
        return observation

    def transition(self, env: SignalEnv) -> Tuple[Observation, float]:
        """View of the state and reward that followed the last decision step."""
        observation, rewards = self.view(env, env.last_step_rewards)
        return observation, float(np.sum(rewards))

    def view(
        self, env: SignalEnv, step_rewards: Sequence[float]
    ) -> Tuple[Observation, Rewards]:
        truth = env.observe()
        rewards = np.asarray(step_rewards, dtype=np.float64)
        kind, p = self.corruption.kind, self.corruption.p
        if kind == CorruptionKind.VEHICLE_MISSING:
            corrupted = apply_vehicle_missing(env)
        elif kind == CorruptionKind.CELL_NOISE:
            corrupted, rewards = apply_cell_noise(
                truth, rewards, p, self.corruption_rng
            )
        elif kind == CorruptionKind.MASK_REGION:
            corrupted = apply_mask_region(truth, p)
        else:
            corrupted = truth
        return self.impute(corrupted, truth), rewards

    def impute(self, corrupted: Observation, truth: Observation) -> Observation:
        method = self.imputation.method
        if method == ImputationMethod.ARTIFICIAL:
            # Missing locations are unknown for occupancy, so every cell is a
            # candidate and the truth stands in for the imputer's guess.
            restored = corrupted.copy()
            restored[:OCCUPANCY_SIZE] = impute_artificial_exact(
                corrupted[:OCCUPANCY_SIZE],
                truth[:OCCUPANCY_SIZE],
                self.imputation.q,
                self.imputation_rng,
                n_values=2,
                candidates=np.ones(OCCUPANCY_SIZE, dtype=bool),
            )
            return restored
        if method == ImputationMethod.CONTEXT_FILL:
            return impute_context_fill(
                corrupted, self.imputation.window, self.imputation.threshold
            )
        return corrupted
