import logging
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel

from app.base.utils.rng import make_rng

from .dqn import huber, huber_grad
from .network import (
    Q_NET_DIMS,
    Activation,
    Array,
    QNetParams,
    backward,
    forward_cache,
    init_params,
)

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
REL_FLOOR = 1e-6


class LossKind(str, Enum):
    MSE = "mse"
    HUBER = "huber"


class GradCheckResult(BaseModel):
    max_rel_error: float
    n_checked: int
    per_array: Dict[str, float]
    max_abs_grad: float
    n_kinks: int = 0


def _loss_and_pattern(
    params: QNetParams,
    states: Array,
    actions: Array,
    targets: Array,
    loss: LossKind,
) -> Tuple[float, List[Array]]:
    """Batch loss with the on/off pattern of every ReLU unit."""
    output, cache = forward_cache(params, states)
    residual = output[np.arange(len(actions)), actions] - targets
    if loss == LossKind.HUBER:
        value = float(np.mean(huber(residual)))
    else:
        value = float(np.mean(0.5 * residual**2))
    if params.activation != Activation.RELU:
        return value, []
    return value, [pre > 0 for pre in cache["pre"]]


def analytic_gradients(
    params: QNetParams,
    states: Array,
    actions: Array,
    targets: Array,
    loss: LossKind = LossKind.MSE,
) -> Dict[str, Array]:
    rows = np.arange(len(actions))
    output, cache = forward_cache(params, states)
    residual = output[rows, actions] - targets
    grad_output = np.zeros_like(output)
    if loss == LossKind.HUBER:
        grad_output[rows, actions] = huber_grad(residual) / len(actions)
    else:
        grad_output[rows, actions] = residual / len(actions)
    return backward(params, cache, grad_output)


def _sample_indices(
    params: QNetParams, n_params: int, rng: np.random.Generator
) -> List[Tuple[str, int]]:
    """Spread the sample over every array, then top up from the largest ones."""
    names = params.names
    sizes = {name: params.arrays[name].size for name in names}
    total = sum(sizes.values())
    n_params = min(n_params, total)
    share = max(n_params // len(names), 1)
    chosen: Dict[str, List[int]] = {}
    for name in names:
        k = min(share, sizes[name])
        chosen[name] = list(rng.choice(sizes[name], size=k, replace=False))

    remaining = n_params - sum(len(v) for v in chosen.values())
    for name in sorted(names, key=lambda n: -sizes[n]):
        if remaining <= 0:
            break
        spare = np.setdiff1d(np.arange(sizes[name]), chosen[name])
        extra = rng.choice(spare, size=min(remaining, spare.size), replace=False)
        chosen[name] += list(extra)
        remaining -= extra.size
    return [(name, int(i)) for name in names for i in chosen[name]]


def _replacement(
    params: QNetParams,
    name: str,
    tried: Set[Tuple[str, int]],
    rng: np.random.Generator,
) -> Optional[Tuple[str, int]]:
    size = params.arrays[name].size
    if sum(1 for n, _ in tried if n == name) >= size:
        return None
    while True:
        candidate = (name, int(rng.integers(size)))
        if candidate not in tried:
            return candidate


def _crosses_kink(base: List[Array], *nudged: List[Array]) -> bool:
    return any(
        not np.array_equal(a, b) for pattern in nudged for a, b in zip(base, pattern)
    )


def finite_diff_check(
    params: QNetParams,
    states: Array,
    actions: Array,
    targets: Array,
    rng: np.random.Generator,
    n_params: int = 200,
    loss: LossKind = LossKind.MSE,
    h: float = FD_STEP,
) -> GradCheckResult:
    """Compare backprop against central differences on sampled parameters.

    Relative error is |a - n| / max(|a| + |n|, 1e-6). A parameter whose +-h
    nudge switches any ReLU unit sits on a kink, where central differences
    are meaningless; it is replaced by another draw from the same array.
    """
    params = params.copy()
    grads = analytic_gradients(params, states, actions, targets, loss)
    _, base_pattern = _loss_and_pattern(params, states, actions, targets, loss)
    per_array: Dict[str, float] = {}
    pending = _sample_indices(params, n_params, rng)
    tried = set(pending)
    n_checked = n_kinks = 0
    while pending:
        name, index = pending.pop(0)
        flat = params.arrays[name].reshape(-1)
        original = flat[index]
        flat[index] = original + h
        plus, plus_pattern = _loss_and_pattern(params, states, actions, targets, loss)
        flat[index] = original - h
        minus, minus_pattern = _loss_and_pattern(
            params, states, actions, targets, loss
        )
        flat[index] = original

        if _crosses_kink(base_pattern, plus_pattern, minus_pattern):
            n_kinks += 1
            replacement = _replacement(params, name, tried, rng)
            if replacement is not None:
                tried.add(replacement)
                pending.append(replacement)
            continue

        numeric = (plus - minus) / (2 * h)
        analytic = float(grads[name].reshape(-1)[index])
        error = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), REL_FLOOR)
        per_array[name] = max(per_array.get(name, 0.0), error)
        n_checked += 1

    max_error = max(per_array.values(), default=0.0)
    logger.info(
        f"gradient check over {n_checked} parameters ({n_kinks} on kinks): "
        f"max {max_error:.3e}"
    )
    return GradCheckResult(
        max_rel_error=max_error,
        n_checked=n_checked,
        per_array=per_array,
        max_abs_grad=max(float(np.abs(g).max()) for g in grads.values()),
        n_kinks=n_kinks,
    )


def check_q_network(
    seed: int = 0,
    batch: int = 16,
    n_params: int = 200,
    loss: LossKind = LossKind.MSE,
    dims: Tuple[int, ...] = Q_NET_DIMS,
    h: float = FD_STEP,
) -> GradCheckResult:
    """Gradient check of a freshly initialised Q-network on random inputs."""
    rng = make_rng(seed)
    params = init_params(rng, dims)
    states = rng.random((batch, dims[0]))
    actions = rng.integers(0, dims[-1], size=batch)
    targets = rng.normal(size=batch)
    return finite_diff_check(
        params, states, actions, targets, rng, n_params, loss, h
    )
