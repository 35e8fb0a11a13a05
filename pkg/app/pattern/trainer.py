import logging
from typing import Optional

import numpy as np
import numpy.typing as npt

from app.agent.network import (
    Array,
    QNetParams,
    backward,
    forward,
    forward_cache,
    init_params,
    sgd_step,
)
from app.base.exceptions import CustomException, ExType
from app.base.utils.rng import derive_seed, make_rng
from app.corruption.imputation import impute_artificial_exact
from app.corruption.operators import apply_token_missing, apply_token_noise
from app.corruption.schemas import (
    MISSING,
    PATTERN_KINDS,
    CorruptionKind,
    CorruptionSpec,
    ImputationMethod,
    ImputationSpec,
)

from .generator import make_test_split
from .models import PatternDataset, PatternTrainConfig, Tokens

logger = logging.getLogger(__name__)

N_CLASSES = 2


def featurize(tokens: Tokens, pattern_length: int, dim: int) -> npt.NDArray[np.float32]:
    """Bag of g-grams hashed into `dim` buckets; grams touching MISSING are skipped.

    A gram hashes to its base-`dim` polynomial, so single tokens below `dim`
    never collide.
    """
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    n, length = tokens.shape
    features = np.zeros((n, dim), dtype=np.float32)
    if length < pattern_length:
        return features
    grams = np.lib.stride_tricks.sliding_window_view(tokens, pattern_length, axis=1)
    valid = (grams != MISSING).all(axis=2)
    buckets = np.zeros(grams.shape[:2], dtype=np.int64)
    for j in range(pattern_length):
        buckets = (buckets * 1_000_003 + grams[:, :, j]) % dim
    rows = np.broadcast_to(np.arange(n)[:, None], buckets.shape)
    np.add.at(features, (rows[valid], buckets[valid]), 1.0)
    return features


def corrupt_tokens(
    tokens: Tokens, spec: CorruptionSpec, vocab_size: int, rng: np.random.Generator
) -> Tokens:
    if spec.kind not in PATTERN_KINDS:
        raise CustomException(
            code=ExType.VALIDATION_ERROR,
            field="corruption.kind",
            detail=f"{spec.kind.value} does not apply to the pattern task",
        )
    if spec.kind == CorruptionKind.TOKEN_MISSING:
        return apply_token_missing(tokens, spec.p, rng)
    if spec.kind == CorruptionKind.TOKEN_NOISE:
        return apply_token_noise(tokens, spec.p, rng, vocab_size)
    return np.array(tokens, dtype=np.int64)


def restore_tokens(
    corrupted: Tokens,
    original: Tokens,
    spec: ImputationSpec,
    vocab_size: int,
    rng: np.random.Generator,
) -> Tokens:
    if spec.method == ImputationMethod.ARTIFICIAL:
        return impute_artificial_exact(corrupted, original, spec.q, rng, vocab_size)
    if spec.method == ImputationMethod.CONTEXT_FILL:
        raise CustomException(
            code=ExType.VALIDATION_ERROR,
            field="imputation.method",
            detail="context_fill only applies to occupancy grids",
        )
    return corrupted


def softmax(logits: Array) -> Array:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def train_classifier(
    features: npt.NDArray[np.float32],
    labels: npt.NDArray[np.int64],
    config: PatternTrainConfig,
    rng: np.random.Generator,
) -> QNetParams:
    """Minibatch SGD on softmax cross-entropy with the shared MLP."""
    if len(labels) == 0:
        raise CustomException(code=ExType.EMPTY_BATCH, detail="No training samples")
    params = init_params(rng, dims=(features.shape[1], *config.hidden_dims, N_CLASSES))
    for epoch in range(config.epochs):
        order = rng.permutation(len(labels))
        total = 0.0
        for start in range(0, len(order), config.batch):
            index = order[start : start + config.batch]
            logits, cache = forward_cache(params, features[index])
            probs = softmax(logits)
            rows = np.arange(len(index))
            total += float(-np.log(probs[rows, labels[index]] + 1e-12).sum())
            grad = probs.copy()
            grad[rows, labels[index]] -= 1.0
            grads = backward(params, cache, grad / len(index))
            sgd_step(params, grads, config.lr, config.grad_clip)
        logger.debug(f"epoch {epoch + 1} mean loss {total / len(labels):.4f}")
    return params


def accuracy(
    params: QNetParams,
    features: npt.NDArray[np.float32],
    labels: npt.NDArray[np.int64],
) -> float:
    predictions = np.argmax(forward(params, features), axis=1)
    return float(np.mean(predictions == labels))


def score_from_accuracy(value: float) -> float:
    """Chance-corrected binary accuracy rescaled to [0, 1]."""
    return float(np.clip(2.0 * (value - 0.5), 0.0, 1.0))


def train_eval(
    dataset: PatternDataset,
    corruption: CorruptionSpec,
    imputation: ImputationSpec,
    seed: int,
    config: Optional[PatternTrainConfig] = None,
    test: Optional[PatternDataset] = None,
) -> float:
    """Train on corrupted (then imputed) inputs and score on held-out samples.

    Labels are never corrupted. Test inputs go through the same corruption
    and imputation unless `config.corrupt_test` is off. The test split depends
    only on the dataset seed, so every (p, q) cell of a sweep is scored on
    the same samples.
    """
    config = config or PatternTrainConfig()
    spec = dataset.spec
    vocab = spec.vocab_size
    corruption_rng = make_rng(corruption.seed)
    imputation_rng = make_rng(imputation.seed)

    def prepare(tokens: Tokens) -> Tokens:
        corrupted = corrupt_tokens(tokens, corruption, vocab, corruption_rng)
        return restore_tokens(corrupted, tokens, imputation, vocab, imputation_rng)

    if test is None:
        test_seed = derive_seed(dataset.seed or 0, 7)
        test = make_test_split(spec, config.test_per_pattern, make_rng(test_seed))

    g = spec.pattern_length
    train_x = featurize(prepare(dataset.tokens), g, config.feature_dim)
    test_tokens = prepare(test.tokens) if config.corrupt_test else test.tokens
    test_x = featurize(test_tokens, g, config.feature_dim)

    params = train_classifier(
        train_x, dataset.labels, config, make_rng(derive_seed(seed, 5))
    )
    test_accuracy = accuracy(params, test_x, test.labels)
    score = score_from_accuracy(test_accuracy)
    logger.debug(
        f"pattern task p={corruption.p} q={imputation.q} accuracy {test_accuracy:.3f}"
    )
    return score
