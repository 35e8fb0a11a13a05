import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from app.base.exceptions import CustomException, ExType

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

LN_EPS = 1e-5
Q_NET_DIMS = (965, 256, 48, 4)


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass
class QNetParams:
    """Weights of an MLP with an optional layer norm after the first affine.

    Arrays are keyed W1/b1, ln_gain/ln_bias, W2/b2, ... Wn/bn.
    """

    dims: Tuple[int, ...] = Q_NET_DIMS
    layer_norm: bool = True
    activation: Activation = Activation.RELU
    arrays: Dict[str, Array] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def names(self) -> List[str]:
        names = ["W1", "b1"]
        if self.layer_norm:
            names += ["ln_gain", "ln_bias"]
        for i in range(2, self.n_layers + 1):
            names += [f"W{i}", f"b{i}"]
        return names

    def copy(self) -> "QNetParams":
        return QNetParams(
            dims=self.dims,
            layer_norm=self.layer_norm,
            activation=self.activation,
            arrays={k: v.copy() for k, v in self.arrays.items()},
        )

    def flatten(self) -> Array:
        return np.concatenate([self.arrays[name].ravel() for name in self.names])

    def assign(self, flat: Array) -> None:
        offset = 0
        for name in self.names:
            size = self.arrays[name].size
            self.arrays[name] = (
                flat[offset : offset + size].reshape(self.arrays[name].shape).copy()
            )
            offset += size

    def equals(self, other: "QNetParams") -> bool:
        return self.names == other.names and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.names
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())


def init_params(
    rng: np.random.Generator,
    dims: Tuple[int, ...] = Q_NET_DIMS,
    layer_norm: bool = True,
    activation: Activation = Activation.RELU,
) -> QNetParams:
    """Uniform ±1/sqrt(fan_in) weights and biases; layer norm gain 1, bias 0."""
    params = QNetParams(dims=tuple(dims), layer_norm=layer_norm, activation=activation)
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        bound = 1.0 / np.sqrt(fan_in)
        params.arrays[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params.arrays[f"b{i}"] = rng.uniform(-bound, bound, size=fan_out)
        if i == 1 and layer_norm:
            params.arrays["ln_gain"] = np.ones(fan_out)
            params.arrays["ln_bias"] = np.zeros(fan_out)
    return params


def zeros_like(params: QNetParams) -> QNetParams:
    zero = params.copy()
    for name in zero.names:
        zero.arrays[name] = np.zeros_like(zero.arrays[name])
    return zero


def _as_batch(params: QNetParams, states: Array) -> Tuple[Array, bool]:
    states = np.asarray(states, dtype=np.float64)
    single = states.ndim == 1
    batch = states[None, :] if single else states
    if batch.ndim != 2 or batch.shape[1] != params.dims[0]:
        raise CustomException(
            code=ExType.DIMENSION_MISMATCH,
            detail=f"Expected input of width {params.dims[0]}, got {states.shape}",
        )
    return batch, single


def _activate(params: QNetParams, x: Array) -> Array:
    if params.activation == Activation.RELU:
        return np.maximum(x, 0.0)
    return x


def forward_cache(params: QNetParams, states: Array) -> Tuple[Array, Dict[str, Any]]:
    """Batched forward pass keeping the intermediates backward() needs."""
    x, _ = _as_batch(params, states)
    cache: Dict[str, Any] = {"inputs": [], "pre": []}
    a = x
    for i in range(1, params.n_layers + 1):
        cache["inputs"].append(a)
        h = a @ params.arrays[f"W{i}"] + params.arrays[f"b{i}"]
        if i == params.n_layers:
            return h, cache
        if i == 1 and params.layer_norm:
            mean = h.mean(axis=1, keepdims=True)
            inv_std = 1.0 / np.sqrt(h.var(axis=1, keepdims=True) + LN_EPS)
            x_hat = (h - mean) * inv_std
            cache["x_hat"], cache["inv_std"] = x_hat, inv_std
            h = x_hat * params.arrays["ln_gain"] + params.arrays["ln_bias"]
        cache["pre"].append(h)
        a = _activate(params, h)
    raise AssertionError("network has no layers")


def forward(params: QNetParams, states: Array) -> Array:
    """Action values for one state (shape (4,)) or a batch (shape (B, 4))."""
    _, single = _as_batch(params, states)
    output, _ = forward_cache(params, states)
    return output[0] if single else output


def backward(
    params: QNetParams, cache: Dict[str, Any], grad_output: Array
) -> Dict[str, Array]:
    """Gradients of a loss w.r.t. every array, given dLoss/dOutput."""
    grads: Dict[str, Array] = {}
    delta = grad_output
    for i in range(params.n_layers, 0, -1):
        inputs = cache["inputs"][i - 1]
        grads[f"W{i}"] = inputs.T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i == 1:
            break
        delta = delta @ params.arrays[f"W{i}"].T
        if params.activation == Activation.RELU:
            delta = delta * (cache["pre"][i - 2] > 0)
        if i == 2 and params.layer_norm:
            x_hat, inv_std = cache["x_hat"], cache["inv_std"]
            grads["ln_gain"] = (delta * x_hat).sum(axis=0)
            grads["ln_bias"] = delta.sum(axis=0)
            d_hat = delta * params.arrays["ln_gain"]
            width = d_hat.shape[1]
            delta = (
                inv_std
                / width
                * (
                    width * d_hat
                    - d_hat.sum(axis=1, keepdims=True)
                    - x_hat * (d_hat * x_hat).sum(axis=1, keepdims=True)
                )
            )
    return grads


def clip_gradients(grads: Dict[str, Array], max_norm: float) -> float:
    """Scale gradients in place to a global L2 norm of at most `max_norm`."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_step(
    params: QNetParams,
    grads: Dict[str, Array],
    lr: float,
    max_norm: Optional[float] = 10.0,
) -> float:
    norm = clip_gradients(grads, max_norm) if max_norm else 0.0
    for name, grad in grads.items():
        params.arrays[name] -= lr * grad
    return norm


def save_params(
    params: QNetParams, path: Path, seed: int = 0, config_hash: str = ""
) -> None:
    """Write a JSON header line followed by the flat float64 parameter vector."""
    header = {
        "dims": list(params.dims),
        "layer_norm": params.layer_norm,
        "activation": params.activation.value,
        "shapes": {name: list(params.arrays[name].shape) for name in params.names},
        "seed": seed,
        "config_hash": config_hash,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(params.flatten().astype("<f8").tobytes())


def load_params(path: Path) -> Tuple[QNetParams, Dict[str, Any]]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        flat = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    params = QNetParams(
        dims=tuple(header["dims"]),
        layer_norm=header["layer_norm"],
        activation=Activation(header["activation"]),
    )
    for name in params.names:
        params.arrays[name] = np.zeros(header["shapes"][name])
    if flat.size != sum(v.size for v in params.arrays.values()):
        raise CustomException(
            code=ExType.DIMENSION_MISMATCH,
            detail=f"{path} holds {flat.size} values, header expects more or fewer",
        )
    params.assign(flat)
    return params, header
