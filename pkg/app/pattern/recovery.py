import logging

import numpy as np
import numpy.typing as npt

from .models import PatternDataset

logger = logging.getLogger(__name__)


def analytic_recovery(rate: float, p: float, pattern_length: int = 1) -> float:
    """Probability that at least one of Poisson(rate) occurrences survives.

    An occurrence survives when none of its `pattern_length` tokens goes
    missing, so the surviving count is Poisson(rate * (1 - p) ** g).
    """
    return float(1.0 - np.exp(-rate * (1.0 - p) ** pattern_length))


def mc_recovery_oracle(
    dataset: PatternDataset,
    p: float,
    trials: int,
    rng: np.random.Generator,
    resample_plants: bool = False,
) -> npt.NDArray[np.float64]:
    """Per-pattern share of trials in which some occurrence survives intact.

    Corruption is drawn token by token. By default the plants are those in the
    dataset manifest; with `resample_plants` every trial redraws
    Poisson(rate_i) plants instead.
    """
    spec = dataset.spec
    g = spec.pattern_length
    recovered = np.zeros(spec.n_patterns, dtype=np.float64)
    if resample_plants:
        counts = rng.poisson(spec.rates, size=(trials, spec.n_patterns))
    else:
        counts = np.broadcast_to(dataset.plant_counts(), (trials, spec.n_patterns))

    for pattern in range(spec.n_patterns):
        most = int(counts[:, pattern].max(initial=0))
        if most == 0:
            continue
        intact = (rng.random((trials, most, g)) >= p).all(axis=2)
        exists = np.arange(most)[None, :] < counts[:, pattern][:, None]
        recovered[pattern] = float((intact & exists).any(axis=1).mean())
    return recovered
