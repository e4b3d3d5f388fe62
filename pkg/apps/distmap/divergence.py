"""
Sample-based energy distance

    E(A, B) = 2 E|X - Y| - E|X - X'| - E|Y - Y'|

estimated as a V-statistic over all sample pairs. Nonnegative and zero
when the two sample sets coincide.
"""

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import energy_distance as scipy_energy_distance

from apps.core.exceptions import DimensionError, InsufficientDataError

MIN_SAMPLES = 1000
CHUNK = 1000


def _as_samples(values):
    values = np.asarray(values, dtype=np.float64)
    return values[:, None] if values.ndim == 1 else values


def _mean_distance(a, b):
    total = 0.0
    for start in range(0, len(a), CHUNK):
        total += cdist(a[start : start + CHUNK], b).sum()
    return total / (len(a) * len(b))


def energy_distance(a, b, min_samples=MIN_SAMPLES):
    """
    Energy distance between two sample sets

    Args:
        a, b (np.ndarray): [n] or [n, d] samples
        min_samples (int): Minimum size of each set

    Returns:
        float: Estimate >= 0

    Raises:
        InsufficientDataError: If either set has fewer than min_samples rows
        DimensionError: If the sample dimensions differ
    """
    a, b = _as_samples(a), _as_samples(b)
    if len(a) < min_samples or len(b) < min_samples:
        raise InsufficientDataError(
            f"energy distance needs >= {min_samples} samples per set, got {len(a)} and {len(b)}",
            {"sizes": [len(a), len(b)]},
        )
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")

    if a.shape[1] == 1:
        # scipy returns the square root of the same statistic
        return float(scipy_energy_distance(a[:, 0], b[:, 0]) ** 2)
    value = 2 * _mean_distance(a, b) - _mean_distance(a, a) - _mean_distance(b, b)
    return max(float(value), 0.0)
