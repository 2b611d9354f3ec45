"""Penalized nonnegative matrix factorization (CNMF, ZNMF, TNMF) with a
face-recognition benchmark harness."""

from .errors import (
    DatasetError,
    DomainError,
    NumericalError,
    ParameterError,
    PGMError,
    PlanError,
    ShapeError,
)
from .factorization import (
    FactorizationModel,
    PenaltyConfig,
    SolverConfig,
    cost,
    initialize,
    penalty_grad_h,
    penalty_grad_w,
    penalty_value,
    run,
    update_h,
    update_w,
    zellner_g_preset,
)
from .toeplitz import ToeplitzSpec, build_dense, entry, toeplitz_matmul

__version__ = "0.1.0"
