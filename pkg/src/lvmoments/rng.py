"""Seeded RNG streams.

All randomized routines take an explicit integer seed and derive
independent substreams with `rng_stream`; nothing touches numpy's global
generator. Substreams are keyed by small integer tuples so that, e.g.,
trial j of factor i always sees the same draws no matter how the trials
are scheduled.
"""

import numpy as np


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for the given (seed, key...) combination."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(x) for x in key))
    return np.random.default_rng(ss)


def unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniform draw from the unit sphere in R^dim."""
    while True:
        g = rng.standard_normal(dim)
        n = np.linalg.norm(g)
        if n > 1e-12:
            return g / n


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian, sign-fixed)."""
    G = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.diag(R))
