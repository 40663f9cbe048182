import hashlib
import math

import numpy as np


def wrap_angle(theta: float) -> float:
    """Wraps an angle in radians into the half-open interval (-pi, pi]."""
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


def derive_seed(seed: int, *keys: int) -> int:
    """Derives an independent 64-bit seed from a root seed and integer keys.

    The same ``(seed, *keys)`` always yields the same value, and different
    keys yield statistically independent streams.
    """
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def sha256_text(text: str) -> str:
    """Returns the hex SHA-256 digest of a UTF-8 string."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
