import hashlib

import numpy as np

from .errors import ValidationError


def derive_seed(*keys) -> int:
    """Hash a tuple of ints/strings into a 64-bit seed.

    Used for committee members ``derive_seed(master, i)`` and for per-trial
    roles ``derive_seed(master, trial, "points")``.
    """
    h = hashlib.blake2b(digest_size=8)
    for key in keys:
        tag = b"s" if isinstance(key, str) else b"i"
        h.update(tag + str(key if isinstance(key, str) else int(key)).encode() + b"|")
    return int.from_bytes(h.digest(), "little")


def rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def draw(gen: np.random.Generator, distribution: str, shape) -> np.ndarray:
    """Standard Gaussian or Rademacher (+-1) entries."""
    if distribution == "gaussian":
        return gen.standard_normal(shape)
    if distribution == "rademacher":
        return gen.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    raise ValidationError(f"unknown distribution {distribution!r}")
