"""Counter-based 64-bit PRNG (SplitMix64) with Box-Muller Gaussian draws.

Every value is a pure function of (seed, draw index), so streams are
reproducible across platforms and trivially portable to other languages.
Derived streams keep data generation, model init, and validation splits
independent of one another.
"""

import math

import numpy as np

from .errors import ConfigError

_MASK64 = 0xFFFF_FFFF_FFFF_FFFF
_GOLDEN = 0x9E37_79B9_7F4A_7C15


def _mix(z: int) -> int:
    """Output finalizer of the SplitMix64 generator."""
    z = ((z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, tag: str) -> int:
    """Fold a stream tag into a seed so named substreams never collide."""
    h = _mix(seed & _MASK64)
    for b in tag.encode("utf-8"):
        h = _mix(((h ^ b) + _GOLDEN) & _MASK64)
    return h


class SplitMix64:
    """SplitMix64 stream: the state advances by a fixed increment per draw."""

    name = "splitmix64"

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def next_float(self) -> float:
        """Uniform draw in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_gauss(self) -> float:
        """Standard normal via Box-Muller; consumes two draws, caches nothing."""
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # in (0, 1], safe for log
        u2 = self.next_float()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def gauss_matrix(self, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
        """Matrix of iid N(0, scale^2) entries, filled row-major."""
        out = np.empty((rows, cols), dtype=np.float64)
        for i in range(rows):
            for j in range(cols):
                out[i, j] = self.next_gauss() * scale
        return out


_GENERATORS = {"splitmix64": SplitMix64}


def make_generator(name: str, seed: int) -> SplitMix64:
    """Instantiate a named generator; unknown names are a config error."""
    if name not in _GENERATORS:
        known = ", ".join(sorted(_GENERATORS))
        raise ConfigError(f"unknown generator {name!r} (known: {known})")
    return _GENERATORS[name](seed)
