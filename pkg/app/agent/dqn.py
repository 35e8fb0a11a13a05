import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.base.exceptions import CustomException, ExType
from app.base.utils.decorator import timing
from app.base.utils.rng import derive_seed, make_rng
from app.corruption.channel import ObservationChannel
from app.corruption.schemas import CorruptionSpec, ImputationSpec
from app.sim.environment import SignalEnv
from app.sim.models import (
    DECISION_SECONDS,
    N_PHASES,
    OBSERVATION_SIZE,
    EnvConfig,
    Observation,
)

from .network import (
    Array,
    QNetParams,
    backward,
    forward,
    forward_cache,
    init_params,
    sgd_step,
)
from .replay import ReplayBuffer, Transition, TransitionBatch

logger = logging.getLogger(__name__)

EnvFactory = Callable[..., SignalEnv]

HUBER_DELTA = 1.0


class TrainConfig(BaseModel):
    episodes: int = Field(default=50, ge=1)
    batch: int = Field(default=256, ge=1)
    gamma: float = Field(default=0.98, gt=0, lt=1)
    target_update: int = Field(default=10, ge=1)
    eps_init: float = Field(default=1.0, ge=0, le=1)
    eps_final: float = Field(default=0.01, ge=0, le=1)
    lr_init: float = Field(default=1e-3, gt=0)
    lr_final: float = Field(default=1e-4, gt=0)
    decay_fraction: float = Field(default=0.8, gt=0, le=1)
    buffer_size: int = Field(default=10000, ge=1)
    min_replay: Optional[int] = Field(default=None, ge=1)
    hidden_dims: Tuple[int, int] = (256, 48)
    grad_clip: float = Field(default=10.0, gt=0)
    eval_episodes: int = Field(default=5, ge=1)

    @model_validator(mode="after")
    def schedules_non_increasing(self) -> "TrainConfig":
        if self.eps_final > self.eps_init:
            raise ValueError("eps_final must not exceed eps_init")
        if self.lr_final > self.lr_init:
            raise ValueError("lr_final must not exceed lr_init")
        return self

    @property
    def replay_start(self) -> int:
        return self.min_replay or self.batch


def schedule_value(
    init: float, final: float, progress: float, decay_fraction: float = 0.8
) -> float:
    """Linear from `init` to `final` over the first `decay_fraction`, then flat."""
    if progress >= decay_fraction:
        return final
    return init + (final - init) * max(progress, 0.0) / decay_fraction


def huber(residual: Array, delta: float = HUBER_DELTA) -> Array:
    magnitude = np.abs(residual)
    return np.where(
        magnitude <= delta, 0.5 * residual**2, delta * (magnitude - 0.5 * delta)
    )


def huber_grad(residual: Array, delta: float = HUBER_DELTA) -> Array:
    return np.clip(residual, -delta, delta)


class DQNAgent:
    """Double DQN over a QNetParams network with a periodically copied target."""

    def __init__(
        self,
        config: TrainConfig,
        seed: int,
        params: Optional[QNetParams] = None,
    ):
        self.config = config
        self.rng = make_rng(derive_seed(seed, 2))
        self.online = params or init_params(
            make_rng(derive_seed(seed, 3)),
            dims=(OBSERVATION_SIZE, *config.hidden_dims, N_PHASES),
        )
        self.target = self.online.copy()
        self.update_count = 0

    def q_values(self, state: Observation) -> Array:
        return forward(self.online, state)

    def select_action(self, state: Observation, epsilon: float) -> int:
        """Epsilon-greedy; argmax ties go to the lowest index."""
        if epsilon > 0 and self.rng.random() < epsilon:
            return int(self.rng.integers(N_PHASES))
        return int(np.argmax(self.q_values(state)))

    def td_targets(self, batch: TransitionBatch) -> Array:
        """r + gamma * Q_target(s', argmax_a Q_online(s', a)), masked at terminals."""
        rows = np.arange(len(batch))
        next_actions = np.argmax(forward(self.online, batch.next_states), axis=1)
        next_values = forward(self.target, batch.next_states)[rows, next_actions]
        return batch.rewards + self.config.gamma * (1.0 - batch.dones) * next_values

    def update(
        self,
        batch: Union[TransitionBatch, Sequence[Transition]],
        lr: Optional[float] = None,
    ) -> float:
        if not isinstance(batch, TransitionBatch):
            batch = TransitionBatch.from_transitions(batch)
        if len(batch) == 0:
            raise CustomException(code=ExType.EMPTY_BATCH, detail="Batch is empty")

        targets = self.td_targets(batch)
        rows = np.arange(len(batch))
        q, cache = forward_cache(self.online, batch.states)
        residual = q[rows, batch.actions] - targets
        loss = float(np.mean(huber(residual)))

        grad_output = np.zeros_like(q)
        grad_output[rows, batch.actions] = huber_grad(residual) / len(batch)
        grads = backward(self.online, cache, grad_output)
        sgd_step(
            self.online,
            grads,
            self.config.lr_init if lr is None else lr,
            self.config.grad_clip,
        )

        self.update_count += 1
        if self.update_count % self.config.target_update == 0:
            self.target = self.online.copy()
        return loss


@dataclass
class TrainResult:
    agent: DQNAgent
    episode_returns: List[float] = field(default_factory=list)
    eval_returns: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)

    @property
    def eval_return(self) -> float:
        return float(np.mean(self.eval_returns)) if self.eval_returns else 0.0


def make_env_factory(config: EnvConfig) -> EnvFactory:
    return partial(SignalEnv, config.demand())


def run_episode(
    agent: DQNAgent,
    env: SignalEnv,
    channel: ObservationChannel,
    epsilon: float,
) -> float:
    """Greedy (or fixed-epsilon) rollout without learning; returns the true R."""
    env.reset()
    state = channel.observe(env)
    while not env.done:
        env.decision_step(agent.select_action(state, epsilon))
        state, _ = channel.transition(env)
    return env.result().episode_return


def evaluate(
    agent: DQNAgent,
    env_factory: EnvFactory,
    channel: ObservationChannel,
    episodes: int = 5,
    seed: int = 0,
) -> List[float]:
    """Greedy returns over fresh episodes seen through the same channel."""
    returns = []
    for k in range(episodes):
        env = env_factory(
            seed=derive_seed(seed, 1, k), **channel.env_kwargs(episode=10_000 + k)
        )
        returns.append(run_episode(agent, env, channel, epsilon=0.0))
    logger.info(f"evaluation returns {[round(r, 2) for r in returns]}")
    return returns


@timing
def train(
    env_factory: EnvFactory,
    config: TrainConfig,
    corruption: CorruptionSpec,
    imputation: ImputationSpec,
    seed: int,
) -> TrainResult:
    """Train on corrupted observations; environment truth scores every episode."""
    channel = ObservationChannel(corruption, imputation)
    agent = DQNAgent(config, seed)
    buffer = ReplayBuffer(config.buffer_size)
    result = TrainResult(agent=agent)

    horizon = env_factory(seed=0).horizon
    total_steps = config.episodes * (horizon // DECISION_SECONDS)
    step = 0
    epsilon = config.eps_init
    for episode in range(config.episodes):
        env = env_factory(
            seed=derive_seed(seed, 0, episode), **channel.env_kwargs(episode=episode)
        )
        state = channel.observe(env)
        while not env.done:
            progress = step / total_steps
            epsilon = schedule_value(
                config.eps_init, config.eps_final, progress, config.decay_fraction
            )
            lr = schedule_value(
                config.lr_init, config.lr_final, progress, config.decay_fraction
            )
            action = agent.select_action(state, epsilon)
            _, _, done = env.decision_step(action)
            next_state, reward = channel.transition(env)
            buffer.add(Transition(state, action, reward, next_state, done))
            if len(buffer) >= config.replay_start:
                batch = buffer.sample(config.batch, agent.rng)
                result.losses.append(agent.update(batch, lr))
            state = next_state
            step += 1

        episode_return = env.result().episode_return
        result.episode_returns.append(episode_return)
        logger.info(
            f"episode {episode + 1}/{config.episodes} return {episode_return:.2f} "
            f"epsilon {epsilon:.3f}"
        )

    result.eval_returns = evaluate(
        agent, env_factory, channel, config.eval_episodes, seed=seed
    )
    return result
