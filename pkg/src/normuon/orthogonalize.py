"""Approximate and exact orthogonalization of dense matrices.

`ns5` runs the quintic Newton-Schulz iteration
    X <- a X + b (X X^T) X + c (X X^T)^2 X
on the Frobenius-normalized input. The default coefficients trade exact
convergence for a fast, flat singular-value response: outputs land near
1 across a wide input range instead of converging to exactly 1.
`polar_exact` is the SVD-based reference it approximates.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError
from .matrix_core import frobenius_norm, svd_small


@dataclass(frozen=True)
class NsConfig:
    """Iteration count, quintic coefficients, and the zero-input guard."""

    coeff_a: float = 3.4445
    coeff_b: float = -4.7750
    coeff_c: float = 2.0315
    iterations: int = 5
    zero_guard: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.zero_guard < 0:
            raise ValueError(f"zero_guard must be >= 0, got {self.zero_guard}")


DEFAULT_NS = NsConfig()


def ns5(m: np.ndarray, cfg: NsConfig = DEFAULT_NS) -> np.ndarray:
    """Orthogonalize `m` approximately; a (near-)zero input maps to zero.

    Inputs with more rows than columns are transposed first and the
    result transposed back, so the iteration always runs on the wide
    orientation. The transpose round-trip is bit-exact, which makes
    ns5(M^T) == ns5(M)^T hold at the bit level for non-square inputs.
    """
    transposed = m.shape[0] > m.shape[1]
    x = np.ascontiguousarray(m.T) if transposed else np.ascontiguousarray(m)
    fro = frobenius_norm(x)
    if fro <= cfg.zero_guard:
        return np.zeros_like(m)
    x = x / fro
    a, b, c = cfg.coeff_a, cfg.coeff_b, cfg.coeff_c
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(cfg.iterations):
            g = x @ x.T
            x = a * x + (b * g + c * (g @ g)) @ x
            if not np.isfinite(x).all():
                raise NumericError(f"non-finite values at iteration {k}")
    return np.ascontiguousarray(x.T) if transposed else x


def polar_exact(m: np.ndarray) -> np.ndarray:
    """Closest semi-orthogonal matrix U V^T from the thin SVD of `m`."""
    if frobenius_norm(m) == 0.0:
        raise DomainError("polar factor of the zero matrix is undefined")
    res = svd_small(m)
    return res.u @ res.v.T
