"""Symmetric unit-diagonal Toeplitz operators used by the TNMF penalty.

Two generating sequences are supported, indexed by the distance
``d = |i - j|`` (both equal 1 at ``d = 0``):

``geometric``
    ``rho ** d`` -- the AR(1) correlation matrix.
``damped-alternating``
    ``(-1) ** (d + 1) * (rho / d) ** (nu * d)`` -- a sign-alternating,
    super-exponentially decaying band.

An operator is kept as its first row only.  Products with a dense block are
computed without ever forming the ``dim x dim`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import ShapeError

GEOMETRIC = "geometric"
DAMPED_ALTERNATING = "damped-alternating"
KINDS = (GEOMETRIC, DAMPED_ALTERNATING)

# Above this many nonzero off-diagonals the banded product switches to FFT.
_MAX_BAND = 64


@dataclass(frozen=True)
class ToeplitzSpec:
    kind: str
    rho: float
    dim: int
    nu: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown Toeplitz kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.kind == DAMPED_ALTERNATING and not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")

    def with_dim(self, dim: int) -> "ToeplitzSpec":
        return ToeplitzSpec(self.kind, self.rho, dim, self.nu)


def _coefficient(spec: ToeplitzSpec, d: int) -> float:
    if d == 0:
        return 1.0
    if spec.kind == GEOMETRIC:
        return spec.rho ** d
    sign = 1.0 if d % 2 == 1 else -1.0
    return sign * (spec.rho / d) ** (spec.nu * d)


def first_row(spec: ToeplitzSpec) -> np.ndarray:
    """Generating sequence ``c[d]`` for ``d = 0 .. dim-1``."""
    d = np.arange(spec.dim, dtype=np.float64)
    if spec.kind == GEOMETRIC:
        c = np.power(spec.rho, d)
    else:
        dd = np.maximum(d, 1.0)
        c = np.power(spec.rho / dd, spec.nu * dd)
        c[2::2] *= -1.0
    c[0] = 1.0
    return c


def entry(spec: ToeplitzSpec, i: int, j: int) -> float:
    if not (0 <= i < spec.dim and 0 <= j < spec.dim):
        raise IndexError(f"index ({i}, {j}) out of range for dimension {spec.dim}")
    return _coefficient(spec, abs(i - j))


def build_dense(spec: ToeplitzSpec) -> np.ndarray:
    return scipy.linalg.toeplitz(first_row(spec))


def _bandwidth(c: np.ndarray) -> int:
    nz = np.flatnonzero(c[1:])
    return int(nz[-1]) + 1 if nz.size else 0


def toeplitz_matmul(spec: ToeplitzSpec, m: np.ndarray) -> np.ndarray:
    """Return ``build_dense(spec) @ m`` without materialising the operator."""
    if m.ndim != 2 or m.shape[0] != spec.dim:
        raise ShapeError(
            f"toeplitz_matmul: operator is {spec.dim}x{spec.dim}, operand is {m.shape}"
        )
    if spec.rho == 0.0:
        return m.copy()
    if spec.kind == GEOMETRIC:
        if spec.rho == 1.0:
            return np.broadcast_to(m.sum(axis=0), m.shape).copy()
        # Sigma = L + L^T - I with L the lower-triangular AR(1) filter.
        a = [1.0, -spec.rho]
        fwd = scipy.signal.lfilter([1.0], a, m, axis=0)
        bwd = scipy.signal.lfilter([1.0], a, m[::-1], axis=0)[::-1]
        return fwd + bwd - m
    c = first_row(spec)
    band = _bandwidth(c)
    if band > _MAX_BAND:
        return scipy.linalg.matmul_toeplitz((c, c), m)
    out = m.copy()
    for d in range(1, band + 1):
        if c[d] == 0.0:
            continue
        out[d:] += c[d] * m[:-d]
        out[:-d] += c[d] * m[d:]
    return out
