from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, field_validator

N_APPROACHES = 4
LANES_PER_APPROACH = 3
N_LANES = N_APPROACHES * LANES_PER_APPROACH
CELL_LENGTH = 5.0
N_CELLS = 80
LANE_LENGTH = CELL_LENGTH * N_CELLS
STOP_SLOT = N_CELLS - 1

OCCUPANCY_SIZE = N_LANES * N_CELLS
N_PHASES = 4
OBSERVATION_SIZE = OCCUPANCY_SIZE + N_PHASES + 1

DECISION_SECONDS = 6
V_MAX_CELLS = 3
DISCHARGE_HEADWAY = 2
STOP_SPEED = 0.3
QUEUE_CENTER = 80.0
DURATION_SCALE = 60.0
DURATION_CLIP = 2.0

Observation = npt.NDArray[np.float64]


class Approach(int, Enum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


class Movement(int, Enum):
    LEFT = 0
    THROUGH = 1
    RIGHT = 2


class PhaseAction(str, Enum):
    EW_LEFT = "ew_left"
    EW_THROUGH = "ew_through"
    NS_LEFT = "ns_left"
    NS_THROUGH = "ns_through"

    @property
    def action_index(self) -> int:
        return PHASES.index(self)

    @classmethod
    def from_index(cls, index: int) -> "PhaseAction":
        return PHASES[int(index)]


PHASES: List[PhaseAction] = list(PhaseAction)


def lane_id(approach: Approach, movement: Movement) -> int:
    return int(approach) * LANES_PER_APPROACH + int(movement)


def _green_lanes(phase: PhaseAction) -> frozenset[int]:
    if phase in (PhaseAction.EW_LEFT, PhaseAction.EW_THROUGH):
        approaches = (Approach.EAST, Approach.WEST)
    else:
        approaches = (Approach.NORTH, Approach.SOUTH)
    if phase in (PhaseAction.EW_LEFT, PhaseAction.NS_LEFT):
        movements: Tuple[Movement, ...] = (Movement.LEFT,)
    else:
        # Right turns run with their approach's through phase.
        movements = (Movement.THROUGH, Movement.RIGHT)
    return frozenset(lane_id(a, m) for a in approaches for m in movements)


GREEN_LANES = {phase: _green_lanes(phase) for phase in PHASES}


@dataclass(slots=True)
class Vehicle:
    """A vehicle on a lane; `slot` counts 5 m cells from the lane entry."""

    lane_id: int
    slot: int
    movement: Movement
    speed: float = V_MAX_CELLS * CELL_LENGTH
    equipped: bool = True

    @property
    def position(self) -> float:
        return self.slot * CELL_LENGTH

    @property
    def cell(self) -> int:
        """Observation cell index, 0 adjacent to the stop line."""
        return STOP_SLOT - self.slot


class DemandProfile(BaseModel):
    peak_rate: float = Field(default=0.16, ge=0)
    turn_split: Tuple[float, float, float] = (1.0, 3.0, 2.0)
    horizon: int = Field(default=3600, gt=0)

    @field_validator("horizon")
    @classmethod
    def horizon_in_decisions(cls, value: int) -> int:
        if value % DECISION_SECONDS != 0:
            raise ValueError(f"horizon must be a multiple of {DECISION_SECONDS}")
        return value

    @field_validator("turn_split")
    @classmethod
    def split_non_negative(
        cls, value: Tuple[float, float, float]
    ) -> Tuple[float, float, float]:
        if min(value) < 0 or sum(value) <= 0:
            raise ValueError("turn_split must be non-negative with a positive sum")
        return value

    @property
    def split_probabilities(self) -> npt.NDArray[np.float64]:
        split = np.asarray(self.turn_split, dtype=np.float64)
        return split / split.sum()


class PlanStep(BaseModel):
    phase: PhaseAction
    duration: int = Field(gt=0)


class EnvConfig(BaseModel):
    peak_rate: float = Field(default=0.16, ge=0)
    horizon: int = Field(default=3600, gt=0)
    seed: int = 0
    fixed_plan: Optional[List[PlanStep]] = None

    def demand(self) -> DemandProfile:
        return DemandProfile(peak_rate=self.peak_rate, horizon=self.horizon)


class EpisodeResult(BaseModel):
    returns_per_decision: List[float]
    episode_return: float
    queue_trajectory: List[int]
    step_rewards: List[float]
    phase_trajectory: List[PhaseAction]
    decision_count: int
    spawned: int = 0
    departed: int = 0
    dropped: int = 0

    @property
    def mean_queue(self) -> float:
        if not self.queue_trajectory:
            return 0.0
        return float(np.mean(self.queue_trajectory))
