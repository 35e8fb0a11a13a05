import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.agent.dqn import TrainConfig
from app.base.config import OUTPUT_DIR
from app.base.exceptions import CustomException, ExType
from app.base.utils.rng import stable_hash
from app.corruption.schemas import (
    PATTERN_KINDS,
    SIGNAL_KINDS,
    CorruptionKind,
    CorruptionSpec,
    ImputationMethod,
    ImputationSpec,
)
from app.pattern.models import PatternSpec, PatternTrainConfig
from app.sim.models import EnvConfig

logger = logging.getLogger(__name__)

# q index recorded for cells that run without imputation.
NO_IMPUTATION = -1


class Task(str, Enum):
    SIGNAL_RL = "signal_rl"
    PATTERN = "pattern"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: Task = Task.SIGNAL_RL
    env: EnvConfig = Field(default_factory=EnvConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    pattern: PatternSpec = Field(default_factory=PatternSpec)
    pattern_train: PatternTrainConfig = Field(default_factory=PatternTrainConfig)
    corruption: CorruptionSpec = Field(
        default_factory=lambda: CorruptionSpec(kind=CorruptionKind.VEHICLE_MISSING)
    )
    imputation: ImputationSpec = Field(default_factory=ImputationSpec)
    p_grid: List[float] = Field(default_factory=lambda: [0.0])
    q_grid: List[float] = Field(default_factory=list)
    size_grid: List[float] = Field(default_factory=lambda: [1.0])
    seeds: List[int] = Field(default_factory=lambda: [0])
    include_plain: bool = True
    output_dir: str = OUTPUT_DIR
    master_seed: int = 0
    record_durations: bool = False

    @field_validator("p_grid", "q_grid")
    @classmethod
    def within_unit_interval(cls, value: List[float]) -> List[float]:
        if any(not 0.0 <= v <= 1.0 for v in value):
            raise ValueError("grid values must lie in [0, 1]")
        if len(set(value)) != len(value):
            raise ValueError("grid values must be distinct")
        return value

    @field_validator("size_grid")
    @classmethod
    def positive_sizes(cls, value: List[float]) -> List[float]:
        if not value or any(v <= 0 for v in value):
            raise ValueError("size_grid needs positive values")
        return value

    @field_validator("seeds")
    @classmethod
    def seeds_non_empty(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("seeds must not be empty")
        return value

    def check_task(self) -> None:
        kinds = SIGNAL_KINDS if self.task == Task.SIGNAL_RL else PATTERN_KINDS
        if self.corruption.kind not in kinds:
            raise CustomException(
                code=ExType.VALIDATION_ERROR,
                field="corruption.kind",
                detail=f"{self.corruption.kind.value} does not apply to "
                f"{self.task.value}",
            )
        if self.q_grid and self.imputation.method == ImputationMethod.NONE:
            raise CustomException(
                code=ExType.VALIDATION_ERROR,
                field="imputation.method",
                detail="q_grid given but imputation.method is none",
            )

    def config_hash(self) -> str:
        """Hash of everything that can change a score."""
        payload = self.model_dump(
            mode="json", exclude={"output_dir", "record_durations"}
        )
        return stable_hash(payload)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


class Cell(BaseModel):
    p: float
    q: Optional[float]
    size: float
    seed: int
    p_index: int
    q_index: int
    size_index: int
    seed_index: int
    cell_seed: int
    data_seed: int

    @property
    def key(self) -> Tuple[int, int, int, int]:
        return (self.p_index, self.q_index, self.size_index, self.seed_index)

    @property
    def label(self) -> str:
        return ",".join(str(i) for i in self.key)


class CellResult(BaseModel):
    cell: Cell
    score: Optional[float] = None
    duration_s: float = 0.0
    error: Optional[str] = None
    episode_returns: List[float] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None


class RunManifest(BaseModel):
    config_hash: str
    tool_version: str
    task: Task
    started_at: str
    finished_at: Optional[str] = None
    seed_derivation: str = (
        "derive_seed(master_seed, p_index, q_index, size_index, seed_index)"
    )
    cell_seeds: Dict[str, int] = Field(default_factory=dict)
    completed: Dict[str, bool] = Field(default_factory=dict)
    durations: Dict[str, float] = Field(default_factory=dict)
    failures: Dict[str, str] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)


def _line_of(text: str, loc: Sequence[Union[int, str]]) -> int:
    position = 0
    for part in loc:
        if isinstance(part, str):
            found = text.find(f'"{part}"', position)
            if found >= 0:
                position = found
    return text.count("\n", 0, position) + 1


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a JSON config; errors name the offending line."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise CustomException(
            code=ExType.VALIDATION_ERROR,
            field=f"{source}:{e.lineno}",
            detail=f"{source} line {e.lineno} column {e.colno}: {e.msg}",
        ) from e
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        messages = []
        for error in e.errors():
            loc = error["loc"]
            path = ".".join(str(part) for part in loc)
            messages.append(
                f"{source} line {_line_of(text, loc)}: {path}: {error['msg']}"
            )
        first = e.errors()[0]["loc"]
        raise CustomException(
            code=ExType.VALIDATION_ERROR,
            field=".".join(str(part) for part in first),
            detail="; ".join(messages),
        ) from e
    config.check_task()
    return config


def load_config(path: Path) -> ExperimentConfig:
    if not path.exists():
        raise CustomException(
            code=ExType.USAGE_ERROR, field="config", detail=f"{path} does not exist"
        )
    return parse_config(path.read_text(), source=str(path))
