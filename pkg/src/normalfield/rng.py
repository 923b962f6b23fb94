"""Counter-based random numbers.

Sample jitter must depend only on (seed, pixel index, iteration, sample
index) so that renders are reproducible regardless of batch composition or
thread scheduling.  A small splitmix64-style integer hash gives us a
stateless uniform generator over arbitrary index arrays.
"""

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(h):
    h = (h ^ (h >> np.uint64(30))) * _M1
    h = (h ^ (h >> np.uint64(27))) * _M2
    return h ^ (h >> np.uint64(31))


def hash_u64(seed, *indices):
    """Hash integer index arrays into decorrelated uint64 words.

    Arguments broadcast against each other; the result has the broadcast
    shape.  Every distinct (seed, indices) tuple maps to an independent-
    looking 64-bit word.
    """
    with np.errstate(over="ignore"):
        h = np.uint64(np.uint64(seed) * _GAMMA)
        for ix in indices:
            arr = np.asarray(ix, dtype=np.uint64)
            h = _mix((h + arr * _GAMMA) ^ (h >> np.uint64(29)))
        return _mix(h + _GAMMA)


def uniform(seed, *indices):
    """Uniform floats in [0, 1), one per broadcast element of `indices`."""
    bits = hash_u64(seed, *indices)
    # keep 53 mantissa bits so the conversion to float64 is exact
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
