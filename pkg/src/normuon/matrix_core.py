"""Dense float64 matrix helpers and the NMK1 on-disk format.

Matrices are 2-D C-contiguous numpy arrays. Construction from external
input validates shape and finiteness once; internal ops trust their
operands. All reductions use fixed summation orders so repeated calls
are bit-identical.
"""

from dataclasses import dataclass
import math
import struct

import numpy as np

from .errors import DomainError, NumericError, ShapeError

_MAGIC = b"NMK1"
_HEADER = struct.Struct("<4sII")

SVD_DIM_CAP = 1024


def as_matrix(data, check_finite: bool = True) -> np.ndarray:
    """Build a float64 matrix from nested sequences or an array."""
    a = np.array(data, dtype=np.float64, order="C", copy=True)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"matrix dimensions must be positive, got {a.shape}")
    if check_finite and not np.isfinite(a).all():
        raise NumericError("matrix contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def frobenius_norm(a: np.ndarray) -> float:
    """sqrt of the sum of squared entries."""
    return math.sqrt(float(np.sum(a * a)))


def row_mean_sq(a: np.ndarray) -> np.ndarray:
    """Per-row mean of squared entries, as a 1-D vector."""
    return (a * a).mean(axis=1)


def div_rows(a: np.ndarray, d: np.ndarray, eps: float) -> np.ndarray:
    """Divide row i of `a` by sqrt(d[i]) + eps; eps guards zero rows."""
    if d.shape != (a.shape[0],):
        raise ShapeError(f"row scale has shape {d.shape}, expected ({a.shape[0]},)")
    return a / (np.sqrt(d) + eps)[:, None]


@dataclass
class SvdResult:
    """Thin SVD A = U diag(sigma) V^T with sigma sorted descending."""

    u: np.ndarray      # (m, r)
    sigma: np.ndarray  # (r,)
    v: np.ndarray      # (n, r)


def svd_small(a: np.ndarray) -> SvdResult:
    """Thin SVD for desk-scale matrices (min(m, n) <= 1024)."""
    m, n = a.shape
    if min(m, n) > SVD_DIM_CAP:
        raise ShapeError(f"svd_small supports min(m, n) <= {SVD_DIM_CAP}, got {m}x{n}")
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge for {m}x{n} matrix") from exc
    return SvdResult(u=u, sigma=s, v=np.ascontiguousarray(vh.T))


def matrix_to_bytes(a: np.ndarray) -> bytes:
    """Serialize to NMK1: magic, u32 rows, u32 cols, row-major f64 LE."""
    m, n = a.shape
    return _HEADER.pack(_MAGIC, m, n) + np.ascontiguousarray(a, dtype="<f8").tobytes()


def matrix_from_bytes(raw: bytes) -> np.ndarray:
    """Parse an NMK1 blob, validating structure and finiteness."""
    if len(raw) < _HEADER.size:
        raise DomainError("NMK1 blob is truncated")
    magic, m, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise DomainError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    want = _HEADER.size + 8 * m * n
    if len(raw) != want:
        raise DomainError(f"NMK1 payload has {len(raw)} bytes, expected {want}")
    a = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(m, n)
    return as_matrix(a)


def save_matrix(path, a: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(matrix_to_bytes(a))


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return matrix_from_bytes(fh.read())
