"""Dense float64 matrix helpers used by every multiplicative update.

Matrices are plain 2-D ``numpy.ndarray`` objects.  The functions here add the
shape and finiteness checks the update engine relies on, plus the guarded
division that keeps the update ratios finite.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

#: Floor applied to every update denominator.
EPS = 1e-12


def as_matrix(a, name: str = "matrix", nonnegative: bool = False) -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array.

    With ``nonnegative=True`` every entry must also be >= 0.
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} contains NaN or infinite entries")
    if nonnegative and m.size and m.min() < 0:
        raise DomainError(f"{name} contains negative entries (min {m.min():g})")
    return m


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a: np.ndarray) -> np.ndarray:
    return a.T


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b, "hadamard")
    return a * b


def safe_divide(num: np.ndarray, den: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Elementwise ``num / max(den, eps)``."""
    _same_shape(num, den, "safe_divide")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return num / np.maximum(den, eps)


def frobenius_norm_sq(a: np.ndarray) -> float:
    return float(np.sum(np.square(a)))
