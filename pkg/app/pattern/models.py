from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, model_validator

Tokens = npt.NDArray[np.int64]


class PatternSpec(BaseModel):
    """Synthetic corpus where planted token g-grams decide the label.

    Pattern i is the g-gram of reserved ids [i*g, (i+1)*g); background tokens
    are drawn from the remaining ids. `rates[i]` is the expected number of
    clean occurrences of pattern i across the whole dataset.
    """

    vocab_size: int = Field(default=508, ge=2)
    n_patterns: int = Field(default=8, ge=1)
    pattern_length: int = Field(default=1, ge=1)
    rates: List[float] = Field(default_factory=lambda: [6.0] * 8)
    sample_length: int = Field(default=12, ge=1)
    n_samples: int = Field(default=400, ge=1)

    @model_validator(mode="after")
    def patterns_fit_vocabulary(self) -> "PatternSpec":
        if len(self.rates) != self.n_patterns:
            raise ValueError(
                f"rates has {len(self.rates)} entries for {self.n_patterns} patterns"
            )
        if any(rate < 0 for rate in self.rates):
            raise ValueError("rates must be non-negative")
        if self.n_patterns * self.pattern_length >= self.vocab_size:
            raise ValueError("patterns leave no background vocabulary")
        return self

    @property
    def reserved(self) -> int:
        return self.n_patterns * self.pattern_length

    def pattern_tokens(self, index: int) -> Tokens:
        start = index * self.pattern_length
        return np.arange(start, start + self.pattern_length, dtype=np.int64)

    def pattern_class(self, index: int) -> int:
        return index % 2


class PlantRecord(BaseModel):
    pattern: int
    sample: int
    position: int


class PatternTrainConfig(BaseModel):
    hidden_dims: Tuple[int, int] = (64, 16)
    epochs: int = Field(default=5, ge=1)
    lr: float = Field(default=0.1, gt=0)
    batch: int = Field(default=4, ge=1)
    grad_clip: float = Field(default=10.0, gt=0)
    feature_dim: int = Field(default=8192, ge=2)
    test_per_pattern: int = Field(default=25, ge=1)
    corrupt_test: bool = True


@dataclass
class PatternDataset:
    spec: PatternSpec
    tokens: Tokens
    labels: npt.NDArray[np.int64]
    plants: List[PlantRecord] = field(default_factory=list)
    seed: Optional[int] = None

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def plant_counts(self) -> npt.NDArray[np.int64]:
        counts = np.zeros(self.spec.n_patterns, dtype=np.int64)
        for plant in self.plants:
            counts[plant.pattern] += 1
        return counts

    def manifest(self) -> Dict[str, Any]:
        return {
            "spec": self.spec.model_dump(),
            "seed": self.seed,
            "plants": [plant.model_dump() for plant in self.plants],
        }
