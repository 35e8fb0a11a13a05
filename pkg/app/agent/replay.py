import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt

from app.base.exceptions import CustomException, ExType
from app.sim.models import OBSERVATION_SIZE, Observation

logger = logging.getLogger(__name__)


@dataclass
class Transition:
    state: Observation
    action: int
    reward: float
    next_state: Observation
    done: bool


@dataclass
class TransitionBatch:
    states: npt.NDArray[np.float64]
    actions: npt.NDArray[np.int64]
    rewards: npt.NDArray[np.float64]
    next_states: npt.NDArray[np.float64]
    dones: npt.NDArray[np.float64]

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        if not transitions:
            raise CustomException(code=ExType.EMPTY_BATCH, detail="Batch is empty")
        return cls(
            states=np.stack(
                [np.asarray(t.state, dtype=np.float64) for t in transitions]
            ),
            actions=np.array([t.action for t in transitions], dtype=np.int64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.stack(
                [np.asarray(t.next_state, dtype=np.float64) for t in transitions]
            ),
            dones=np.array([float(t.done) for t in transitions], dtype=np.float64),
        )


class ReplayBuffer:
    """Fixed-capacity ring of transitions.

    States are stored as float32; occupancy is binary and the duration feature
    only needs a few significant digits.
    """

    def __init__(self, capacity: int = 10000, state_size: int = OBSERVATION_SIZE):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_size), dtype=np.float32)
        self.next_states = np.zeros((capacity, state_size), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=np.float64)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, transition: Transition) -> None:
        if np.shape(transition.state) != self.states.shape[1:]:
            raise CustomException(
                code=ExType.DIMENSION_MISMATCH,
                detail=f"Transition state shape {np.shape(transition.state)} "
                f"does not match {self.states.shape[1:]}",
            )
        i = self.cursor
        self.states[i] = transition.state
        self.next_states[i] = transition.next_state
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.dones[i] = float(transition.done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform sample without replacement within the batch."""
        if self.size == 0 or batch_size < 1:
            raise CustomException(
                code=ExType.EMPTY_BATCH,
                detail=f"Cannot sample {batch_size} from a buffer of {self.size}",
            )
        index = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return TransitionBatch(
            states=self.states[index].astype(np.float64),
            actions=self.actions[index],
            rewards=self.rewards[index],
            next_states=self.next_states[index].astype(np.float64),
            dones=self.dones[index],
        )
