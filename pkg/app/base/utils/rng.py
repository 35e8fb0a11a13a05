import hashlib
import json
from typing import Any

import numpy as np


def _entropy_word(part: int) -> int:
    # Zigzag: 0, -1, 1, -2, ... -> 0, 1, 2, 3, ... keeps every bit of the part.
    part = int(part)
    return 2 * part if part >= 0 else -2 * part - 1


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from integer parts of any size (negative allowed)."""
    sequence = np.random.SeedSequence([_entropy_word(part) for part in parts])
    low, high = sequence.generate_state(2, dtype=np.uint32)
    return (int(high) & 0x7FFFFFFF) << 32 | int(low)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def stable_hash(payload: Any, length: int = 12) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:length]
