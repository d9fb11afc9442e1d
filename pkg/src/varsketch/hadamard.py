import numpy as np


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


def fwht(x, axis: int = 0) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along ``axis``.

    Natural (Sylvester) ordering, i.e. the same matrix as
    ``scipy.linalg.hadamard``; ``H @ H.T == n * I``.  The axis length must be
    a power of two.  Runs in O(n log n) per fibre.
    """
    x = np.ascontiguousarray(np.moveaxis(np.asarray(x, dtype=np.float64), axis, 0)).copy()
    n = x.shape[0]
    if n & (n - 1):
        raise ValueError(f"fwht length must be a power of two, got {n}")
    tail = x.shape[1:]
    h = 1
    while h < n:
        y = x.reshape((n // (2 * h), 2, h) + tail)
        a = y[:, 0].copy()
        b = y[:, 1]
        y[:, 0] += b
        y[:, 1] = a - b
        h *= 2
    return np.moveaxis(x, 0, axis)
