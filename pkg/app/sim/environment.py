import logging
import math
from typing import List, Optional, Tuple, Union

import numpy as np

from app.base.exceptions import CustomException, ExType
from app.base.utils.rng import make_rng

from .models import (
    CELL_LENGTH,
    DECISION_SECONDS,
    DISCHARGE_HEADWAY,
    DURATION_CLIP,
    DURATION_SCALE,
    GREEN_LANES,
    LANES_PER_APPROACH,
    N_APPROACHES,
    N_CELLS,
    N_LANES,
    N_PHASES,
    OBSERVATION_SIZE,
    OCCUPANCY_SIZE,
    QUEUE_CENTER,
    STOP_SLOT,
    STOP_SPEED,
    V_MAX_CELLS,
    Approach,
    DemandProfile,
    EpisodeResult,
    Movement,
    Observation,
    PhaseAction,
    Vehicle,
    lane_id,
)

logger = logging.getLogger(__name__)

EW_APPROACHES = (Approach.EAST, Approach.WEST)


def arrival_rates(t: int, demand: DemandProfile) -> Tuple[float, float]:
    """(EW, NS) per-lane Bernoulli rates at second t, clipped to [0, 1]."""
    angle = math.pi * t / (2 * demand.horizon)
    ew = min(max(demand.peak_rate * math.sin(angle), 0.0), 1.0)
    ns = min(max(demand.peak_rate * math.cos(angle), 0.0), 1.0)
    return ew, ns


def spawn_arrivals(
    t: int,
    demand: DemandProfile,
    rng: np.random.Generator,
    miss_ratio: float = 0.0,
    detection_rng: Optional[np.random.Generator] = None,
) -> List[Vehicle]:
    """Draw this second's arrivals; one Bernoulli draw per lane of each approach.

    Each arrival picks its movement from the turn split and joins the lane
    dedicated to that movement. Equipped flags come from `detection_rng` so
    that detection never perturbs the arrival stream.
    """
    ew_rate, ns_rate = arrival_rates(t, demand)
    rates = np.array(
        [ew_rate if Approach(a) in EW_APPROACHES else ns_rate for a in range(4)]
    )
    draws = rng.random((N_APPROACHES, LANES_PER_APPROACH)) < rates[:, None]
    approaches = np.repeat(np.arange(N_APPROACHES), draws.sum(axis=1))
    if approaches.size == 0:
        return []

    movements = rng.choice(3, size=approaches.size, p=demand.split_probabilities)
    if detection_rng is not None and miss_ratio > 0:
        equipped = detection_rng.random(approaches.size) >= miss_ratio
    else:
        equipped = np.ones(approaches.size, dtype=bool)

    return [
        Vehicle(
            lane_id=lane_id(Approach(int(a)), Movement(int(m))),
            slot=0,
            movement=Movement(int(m)),
            equipped=bool(e),
        )
        for a, m, e in zip(approaches, movements, equipped)
    ]


def step_reward(q: int) -> float:
    return -(q - QUEUE_CENTER) / QUEUE_CENTER


class SignalEnv:
    """Single four-approach intersection on a 5 m cellular grid.

    Lanes are stored front vehicle first. All randomness flows through the
    arrival stream (seeded by `seed`) and the detection stream (seeded by
    `detection_seed`).
    """

    def __init__(
        self,
        demand: DemandProfile,
        seed: int,
        miss_ratio: float = 0.0,
        detection_seed: int = 0,
    ):
        self.demand = demand
        self.seed = seed
        self.miss_ratio = miss_ratio
        self.detection_seed = detection_seed
        self.reset()

    @property
    def horizon(self) -> int:
        return self.demand.horizon

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    @property
    def n_vehicles(self) -> int:
        return sum(len(lane) for lane in self.lanes)

    def reset(self) -> Observation:
        self.rng = make_rng(self.seed)
        self.detection_rng = make_rng(self.detection_seed)
        self.lanes: List[List[Vehicle]] = [[] for _ in range(N_LANES)]
        self.last_departure = [-math.inf] * N_LANES
        self.t = 0
        self.phase = PhaseAction.EW_LEFT
        self.phase_duration = 0
        self.spawned = 0
        self.departed = 0
        self.dropped = 0
        self.queue_trajectory: List[int] = []
        self.step_rewards: List[float] = []
        self.phase_trajectory: List[PhaseAction] = []
        self.returns_per_decision: List[float] = []
        self.last_step_rewards: List[float] = []
        return self.observe()

    def place_vehicle(self, vehicle: Vehicle) -> bool:
        """Insert a vehicle keeping the lane ordered; refuses occupied slots."""
        lane = self.lanes[vehicle.lane_id]
        if any(other.slot == vehicle.slot for other in lane):
            return False
        lane.append(vehicle)
        lane.sort(key=lambda v: v.slot, reverse=True)
        self.spawned += 1
        return True

    def spawn(self) -> None:
        for vehicle in spawn_arrivals(
            self.t, self.demand, self.rng, self.miss_ratio, self.detection_rng
        ):
            lane = self.lanes[vehicle.lane_id]
            if lane and lane[-1].slot == 0:
                self.dropped += 1
                continue
            lane.append(vehicle)
            self.spawned += 1

    def advance_one_second(self) -> None:
        green = GREEN_LANES[self.phase]
        for lid, lane in enumerate(self.lanes):
            if not lane:
                continue
            front = lane[0]
            if (
                lid in green
                and front.slot == STOP_SLOT
                and self.t - self.last_departure[lid] >= DISCHARGE_HEADWAY
            ):
                lane.pop(0)
                self.departed += 1
                self.last_departure[lid] = self.t

            limit = STOP_SLOT
            for vehicle in lane:
                move = max(min(V_MAX_CELLS, limit - vehicle.slot), 0)
                vehicle.slot += move
                vehicle.speed = move * CELL_LENGTH
                limit = vehicle.slot - 1

    def count_queued(self) -> int:
        return sum(
            1 for lane in self.lanes for vehicle in lane if vehicle.speed < STOP_SPEED
        )

    def tick(self) -> float:
        """One simulated second: move, spawn, score."""
        self.advance_one_second()
        self.spawn()
        queued = self.count_queued()
        reward = step_reward(queued)
        self.queue_trajectory.append(queued)
        self.step_rewards.append(reward)
        self.phase_trajectory.append(self.phase)
        self.phase_duration += 1
        self.t += 1
        return reward

    def decision_step(
        self, action: Union[int, PhaseAction]
    ) -> Tuple[Observation, float, bool]:
        if self.done:
            raise CustomException(
                code=ExType.EPISODE_FINISHED,
                detail=f"Episode finished after {self.horizon} steps; call reset()",
            )
        if isinstance(action, PhaseAction):
            phase = action
        else:
            phase = PhaseAction.from_index(action)
        if phase != self.phase:
            self.phase = phase
            self.phase_duration = 0

        self.last_step_rewards = []
        for _ in range(DECISION_SECONDS):
            self.last_step_rewards.append(self.tick())
            if self.done:
                break
        reward = float(sum(self.last_step_rewards))
        self.returns_per_decision.append(reward)
        return self.observe(), reward, self.done

    def occupancy(self, equipped_only: bool = False) -> np.ndarray:
        grid = np.zeros((N_LANES, N_CELLS), dtype=np.float64)
        for lid, lane in enumerate(self.lanes):
            for vehicle in lane:
                if equipped_only and not vehicle.equipped:
                    continue
                grid[lid, vehicle.cell] = 1.0
        return grid

    def observe(self, equipped_only: bool = False) -> Observation:
        return build_observation(
            self.occupancy(equipped_only), self.phase, self.phase_duration
        )

    def result(self) -> EpisodeResult:
        return EpisodeResult(
            returns_per_decision=list(self.returns_per_decision),
            episode_return=float(sum(self.step_rewards)),
            queue_trajectory=list(self.queue_trajectory),
            step_rewards=list(self.step_rewards),
            phase_trajectory=list(self.phase_trajectory),
            decision_count=len(self.returns_per_decision),
            spawned=self.spawned,
            departed=self.departed,
            dropped=self.dropped,
        )


def build_observation(
    occupancy: np.ndarray, phase: PhaseAction, phase_duration: float
) -> Observation:
    observation = np.zeros(OBSERVATION_SIZE, dtype=np.float64)
    observation[:OCCUPANCY_SIZE] = np.asarray(occupancy, dtype=np.float64).reshape(-1)
    observation[OCCUPANCY_SIZE + phase.action_index] = 1.0
    observation[-1] = min(max(phase_duration / DURATION_SCALE, 0.0), DURATION_CLIP)
    return observation


def split_observation(
    observation: Observation,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """(occupancy as lanes x cells, phase one-hot, normalized duration)."""
    if observation.shape != (OBSERVATION_SIZE,):
        raise CustomException(
            code=ExType.DIMENSION_MISMATCH,
            detail=f"Observation must have {OBSERVATION_SIZE} values, "
            f"got {observation.shape}",
        )
    occupancy = observation[:OCCUPANCY_SIZE].reshape(N_LANES, N_CELLS)
    phase = observation[OCCUPANCY_SIZE : OCCUPANCY_SIZE + N_PHASES]
    return occupancy, phase, float(observation[-1])
