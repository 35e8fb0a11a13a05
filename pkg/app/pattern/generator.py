import csv
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import numpy.typing as npt

from app.base.exceptions import CustomException, ExType

from .models import PatternDataset, PatternSpec, PlantRecord, Tokens

logger = logging.getLogger(__name__)

# Expected plants may occupy at most this share of all token slots.
MAX_PACKING = 0.5


def background(
    spec: PatternSpec, n_samples: int, rng: np.random.Generator
) -> Tokens:
    return rng.integers(
        spec.reserved, spec.vocab_size, size=(n_samples, spec.sample_length)
    ).astype(np.int64)


def labels_from_plants(
    spec: PatternSpec, plants: Sequence[PlantRecord], n_samples: int
) -> npt.NDArray[np.int64]:
    """Parity of the class bits of the distinct patterns present in a sample."""
    present = np.zeros((n_samples, spec.n_patterns), dtype=bool)
    for plant in plants:
        present[plant.sample, plant.pattern] = True
    classes = np.array([spec.pattern_class(i) for i in range(spec.n_patterns)])
    return (present.astype(np.int64) @ classes % 2).astype(np.int64)


def _free_starts(taken: npt.NDArray[np.bool_], length: int) -> npt.NDArray[np.int64]:
    windows = np.lib.stride_tricks.sliding_window_view(taken, length)
    return np.flatnonzero(~windows.any(axis=1))


def _check_packing(spec: PatternSpec, n_samples: int, expected_plants: float) -> None:
    g, capacity = spec.pattern_length, n_samples * spec.sample_length
    if g > spec.sample_length or expected_plants * g > MAX_PACKING * capacity:
        raise CustomException(
            code=ExType.INFEASIBLE_PACKING,
            field="pattern",
            detail=f"{expected_plants:.1f} expected plants of length {g} do not fit "
            f"in {n_samples} samples of length {spec.sample_length}",
        )


def plant(
    tokens: Tokens,
    taken: npt.NDArray[np.bool_],
    spec: PatternSpec,
    pattern: int,
    sample: int,
    rng: np.random.Generator,
) -> Optional[PlantRecord]:
    starts = _free_starts(taken[sample], spec.pattern_length)
    if starts.size == 0:
        return None
    position = int(rng.choice(starts))
    end = position + spec.pattern_length
    tokens[sample, position:end] = spec.pattern_tokens(pattern)
    taken[sample, position:end] = True
    return PlantRecord(pattern=pattern, sample=sample, position=position)


def generate(
    spec: PatternSpec, rng: np.random.Generator, seed: Optional[int] = None
) -> PatternDataset:
    """Uniform background with Poisson(rate_i) non-overlapping plants of pattern i."""
    _check_packing(spec, spec.n_samples, sum(spec.rates))
    tokens = background(spec, spec.n_samples, rng)
    taken = np.zeros_like(tokens, dtype=bool)
    counts = rng.poisson(spec.rates)

    plants: List[PlantRecord] = []
    for pattern, count in enumerate(counts):
        for _ in range(int(count)):
            sample = int(rng.integers(spec.n_samples))
            record = plant(tokens, taken, spec, pattern, sample, rng)
            if record is None:
                open_samples = [
                    s
                    for s in range(spec.n_samples)
                    if _free_starts(taken[s], spec.pattern_length).size
                ]
                if not open_samples:
                    raise CustomException(
                        code=ExType.INFEASIBLE_PACKING,
                        field="pattern",
                        detail=f"No room left for pattern {pattern}",
                    )
                sample = int(rng.choice(open_samples))
                record = plant(tokens, taken, spec, pattern, sample, rng)
            assert record is not None
            plants.append(record)

    labels = labels_from_plants(spec, plants, spec.n_samples)
    logger.debug(f"planted {counts.tolist()} occurrences over {spec.n_samples} samples")
    return PatternDataset(
        spec=spec, tokens=tokens, labels=labels, plants=plants, seed=seed
    )


def make_test_split(
    spec: PatternSpec, per_pattern: int, rng: np.random.Generator
) -> PatternDataset:
    """Held-out samples with exactly one plant each, balanced across patterns."""
    n_samples = per_pattern * spec.n_patterns
    tokens = background(spec, n_samples, rng)
    taken = np.zeros_like(tokens, dtype=bool)
    plants = []
    for sample in range(n_samples):
        record = plant(tokens, taken, spec, sample % spec.n_patterns, sample, rng)
        if record is None:
            raise CustomException(
                code=ExType.INFEASIBLE_PACKING,
                field="pattern.sample_length",
                detail="Pattern is longer than a sample",
            )
        plants.append(record)
    test_spec = spec.model_copy(update={"n_samples": n_samples})
    labels = labels_from_plants(spec, plants, n_samples)
    return PatternDataset(spec=test_spec, tokens=tokens, labels=labels, plants=plants)


def scale(spec: PatternSpec, factor: float) -> PatternSpec:
    """Enlarge the dataset: n and every rate grow by `factor`."""
    return spec.model_copy(
        update={
            "n_samples": max(int(round(spec.n_samples * factor)), 1),
            "rates": [rate * factor for rate in spec.rates],
        }
    )


def save_dataset(dataset: PatternDataset, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "tokens.txt", "w") as f:
        for row in dataset.tokens:
            f.write(" ".join(str(int(token)) for token in row) + "\n")
    with open(directory / "labels.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample", "label"])
        writer.writerows(enumerate(int(label) for label in dataset.labels))
    with open(directory / "manifest.json", "w") as f:
        json.dump(dataset.manifest(), f, indent=2, sort_keys=True)


def load_dataset(directory: Path) -> PatternDataset:
    with open(directory / "manifest.json") as f:
        manifest = json.load(f)
    with open(directory / "tokens.txt") as f:
        tokens = np.array(
            [[int(token) for token in line.split()] for line in f if line.strip()],
            dtype=np.int64,
        )
    with open(directory / "labels.csv", newline="") as f:
        labels = np.array([int(row["label"]) for row in csv.DictReader(f)])
    spec = PatternSpec.model_validate(manifest["spec"])
    plants = [PlantRecord.model_validate(p) for p in manifest["plants"]]
    expected = (spec.n_samples, spec.sample_length)
    if tokens.shape != expected or labels.size != spec.n_samples:
        raise CustomException(
            code=ExType.MISALIGNED_INPUT,
            detail=f"{directory} does not match its manifest",
        )
    return PatternDataset(
        spec=spec,
        tokens=tokens,
        labels=labels.astype(np.int64),
        plants=plants,
        seed=manifest.get("seed"),
    )
