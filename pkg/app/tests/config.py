import csv
import logging
from logging.config import dictConfig
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Tuple

import numpy as np
import pytest

from app.agent.dqn import TrainConfig
from app.base import config
from app.experiment.schemas import ExperimentConfig
from app.pattern.models import PatternSpec, PatternTrainConfig
from app.sim.environment import SignalEnv
from app.sim.models import EnvConfig

logger = logging.getLogger(__name__)


@pytest.fixture(autouse=True)
def init_config() -> Any:
    dictConfig(config.log_config)
    yield None


def tiny_env_config(peak_rate: float = 0.1, horizon: int = 60) -> EnvConfig:
    return EnvConfig(peak_rate=peak_rate, horizon=horizon)


def tiny_train_config(**updates: Any) -> TrainConfig:
    values = {
        "episodes": 2,
        "batch": 8,
        "target_update": 2,
        "buffer_size": 200,
        "hidden_dims": (16, 8),
        "eval_episodes": 1,
    }
    values.update(updates)
    return TrainConfig(**values)


def small_pattern_spec(**updates: Any) -> PatternSpec:
    values = {
        "vocab_size": 60,
        "n_patterns": 4,
        "rates": [4.0] * 4,
        "sample_length": 8,
        "n_samples": 40,
    }
    values.update(updates)
    return PatternSpec(**values)


def small_pattern_train() -> PatternTrainConfig:
    return PatternTrainConfig(
        hidden_dims=(8, 4), epochs=2, feature_dim=128, test_per_pattern=5
    )


def pattern_experiment(output_dir: Path, **updates: Any) -> ExperimentConfig:
    values = {
        "task": "pattern",
        "pattern": small_pattern_spec().model_dump(),
        "pattern_train": small_pattern_train().model_dump(),
        "corruption": {"kind": "token_missing"},
        "p_grid": [0.0, 0.5],
        "seeds": [0, 1],
        "output_dir": str(output_dir),
    }
    values.update(updates)
    return ExperimentConfig.model_validate(values)


def signal_experiment(output_dir: Path, **updates: Any) -> ExperimentConfig:
    values = {
        "task": "signal_rl",
        "env": {"peak_rate": 0.1, "horizon": 12},
        "train": {
            "episodes": 1,
            "batch": 2,
            "hidden_dims": [4, 4],
            "buffer_size": 20,
            "eval_episodes": 1,
        },
        "p_grid": [0.0],
        "seeds": [0],
        "output_dir": str(output_dir),
    }
    values.update(updates)
    return ExperimentConfig.model_validate(values)


def quiet_env(seed: int = 0, horizon: int = 60) -> SignalEnv:
    """An intersection without arrivals."""
    return SignalEnv(tiny_env_config(peak_rate=0.0, horizon=horizon).demand(), seed)


def decay_samples(
    a: float, lam: float, p: Optional[Sequence[float]] = None
) -> Tuple[np.ndarray, np.ndarray]:
    p_values = np.linspace(0.0, 1.0, 11) if p is None else np.asarray(p)
    return p_values, a * (1.0 - np.exp(-lam * (1.0 - p_values)))


def write_results(
    path: Path, rows: Iterable[Sequence[Any]], manifest: str = "abc123"
) -> Path:
    """Results CSV from (p, q, size, seed, score) tuples."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(config.RESULT_HEADER)
        for p, q, size, seed, score in rows:
            q_text = "" if q is None else repr(float(q))
            p_text, size_text = repr(float(p)), repr(float(size))
            writer.writerow(
                ["pattern", p_text, q_text, size_text, seed, score, "", manifest]
            )
    return path
