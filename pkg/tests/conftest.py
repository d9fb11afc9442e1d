import itertools

import numpy as np
import pytest


def loop_materialize(factors):
    """Brute-force oracle: sum over ranks of products of factor entries, last mode fastest."""
    shape = tuple(A.shape[0] for A in factors)
    r = factors[0].shape[1]
    out = np.zeros(shape)
    for idx in itertools.product(*(range(n) for n in shape)):
        out[idx] = sum(np.prod([A[i, c] for A, i in zip(factors, idx)]) for c in range(r))
    return out.ravel()


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
