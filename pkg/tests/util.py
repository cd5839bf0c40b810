"""Shared helpers for building seeded matrices with known spectra."""

import numpy as np

from normuon.rng import SplitMix64


def gauss(seed: int, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
    return SplitMix64(seed).gauss_matrix(rows, cols, scale)


def random_orthogonal(seed: int, n: int) -> np.ndarray:
    """Orthogonal factor of a seeded Gaussian, with a fixed sign convention."""
    q, r = np.linalg.qr(gauss(seed, n, n))
    return q * np.sign(np.diag(r))


def with_spectrum(seed: int, rows: int, cols: int, sigmas) -> np.ndarray:
    """U diag(sigmas) V^T with seeded orthogonal factors."""
    r = min(rows, cols)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    assert sigmas.shape == (r,)
    u = random_orthogonal(seed, rows)[:, :r]
    v = random_orthogonal(seed + 1, cols)[:, :r]
    return (u * sigmas) @ v.T
