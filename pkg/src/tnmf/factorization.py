"""Penalized multiplicative-update NMF.

Minimises ``0.5 * ||X - WH||_F^2 + alpha * J1(W) + beta * J2(H)`` over
nonnegative ``W`` (n x k) and ``H`` (k x p) for four penalty families:

=============  ==================================  ==================================
family         J1(W)                               J2(H)
=============  ==================================  ==================================
``none``       0                                   0
``frobenius``  ||W||_F^2                           ||H||_F^2
``zellner``    trace(W^T X X^T W) / g              trace(H X^T X H^T) / g
``toeplitz``   trace(W^T S_n W)                    trace(H S_p H^T)
=============  ==================================  ==================================

``S_n`` and ``S_p`` are unit-diagonal Toeplitz operators over pixel index and
sample index (see :mod:`tnmf.toeplitz`).  At ``rho = 0`` they are identities
and the Toeplitz family coincides with the Frobenius one.

The generic updates put the full penalty gradient (factor 2 included) in the
denominator.  The Zellner family instead uses its own published update pair,
which drops that factor of 2; the difference is absorbed by alpha and beta.

Randomness comes from numpy's PCG64 bit generator seeded directly with the
integer seed (``numpy.random.Generator(numpy.random.PCG64(seed))``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, NumericalError, ParameterError, ShapeError
from .matrix import EPS, as_matrix, frobenius_norm_sq, safe_divide
from .toeplitz import GEOMETRIC, ToeplitzSpec, toeplitz_matmul

logger = logging.getLogger(__name__)

NONE = "none"
FROBENIUS = "frobenius"
ZELLNER = "zellner"
TOEPLITZ = "toeplitz"
FAMILIES = (NONE, FROBENIUS, ZELLNER, TOEPLITZ)

#: Command-line algorithm names.
ALGORITHMS = {"nmf": NONE, "cnmf": FROBENIUS, "znmf": ZELLNER, "tnmf": TOEPLITZ}

_SEED_MASK = (1 << 64) - 1


def zellner_g_preset(n: int, p: int) -> float:
    """The ``g = max(n, p**2)`` default for the Zellner penalty."""
    return float(max(n, p * p))


@dataclass(frozen=True)
class PenaltyConfig:
    family: str = NONE
    alpha: float = 0.0
    beta: float = 0.0
    g: float | None = None
    toeplitz_kind: str = GEOMETRIC
    rho: float = 0.0
    nu: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown penalty family {self.family!r}")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ParameterError(
                f"alpha and beta must lie in [0, 1], got {self.alpha}, {self.beta}"
            )
        if self.family == ZELLNER and not (self.g is not None and self.g > 0):
            raise ParameterError(f"zellner penalty needs g > 0, got {self.g}")
        if self.family == TOEPLITZ:
            # Validates kind / rho / nu up front.
            self.w_spec(1)

    @classmethod
    def linked(cls, family: str, alpha: float, **kwargs) -> "PenaltyConfig":
        """Config with ``beta = 1 - alpha``."""
        return cls(family=family, alpha=alpha, beta=1.0 - alpha, **kwargs)

    def w_spec(self, n: int) -> ToeplitzSpec:
        return ToeplitzSpec(self.toeplitz_kind, self.rho, n, self.nu)

    def h_spec(self, p: int) -> ToeplitzSpec:
        return ToeplitzSpec(self.toeplitz_kind, self.rho, p, self.nu)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 500
    rel_tol: float = 1e-6
    eps: float = EPS
    seed: int = 0
    check_every: int = 10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if self.rel_tol < 0:
            raise ParameterError(f"rel_tol must be nonnegative, got {self.rel_tol}")
        if self.check_every < 1:
            raise ParameterError(f"check_every must be >= 1, got {self.check_every}")


@dataclass
class FactorizationModel:
    w: np.ndarray
    h: np.ndarray
    iterations_run: int = 0
    cost_history: list[float] = field(default_factory=list)
    # Number of denominator entries that fell below eps and were clamped.
    clamp_count: int = 0

    @property
    def rank(self) -> int:
        return self.w.shape[1]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _SEED_MASK))


def uniform_positive(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform draws on (0, 1]."""
    return 1.0 - rng.random(shape)


def initialize(n: int, p: int, k: int, seed: int) -> FactorizationModel:
    if not 1 <= k <= min(n, p):
        raise ParameterError(f"rank k={k} must satisfy 1 <= k <= min({n}, {p})")
    rng = make_rng(seed)
    w = uniform_positive(rng, (n, k))
    h = uniform_positive(rng, (k, p))
    return FactorizationModel(w=w, h=h)


def _check_shapes(w=None, h=None, x=None):
    if x is None:
        if w is not None and h is not None and w.shape[1] != h.shape[0]:
            raise ShapeError(f"W {w.shape} and H {h.shape} have different ranks")
        return
    n, p = x.shape
    if w is not None and w.shape[0] != n:
        raise ShapeError(f"W {w.shape} does not match X {x.shape}")
    if h is not None and h.shape[1] != p:
        raise ShapeError(f"H {h.shape} does not match X {x.shape}")
    if w is not None and h is not None and w.shape[1] != h.shape[0]:
        raise ShapeError(f"W {w.shape} and H {h.shape} have different ranks")


def _toeplitz_right(spec: ToeplitzSpec, h: np.ndarray) -> np.ndarray:
    # H S_p, using the symmetry of S_p.
    return toeplitz_matmul(spec, h.T).T


def penalty_value(config: PenaltyConfig, w, h, x) -> tuple[float, float]:
    """Return ``(J1(W), J2(H))`` for the configured family."""
    _check_shapes(w, h, x)
    fam = config.family
    if fam == NONE:
        return 0.0, 0.0
    if fam == FROBENIUS:
        return frobenius_norm_sq(w), frobenius_norm_sq(h)
    if fam == ZELLNER:
        # trace(W^T X X^T W) = ||X^T W||^2, trace(H X^T X H^T) = ||X H^T||^2
        return (
            frobenius_norm_sq(x.T @ w) / config.g,
            frobenius_norm_sq(x @ h.T) / config.g,
        )
    n, p = x.shape
    j1 = float(np.sum(w * toeplitz_matmul(config.w_spec(n), w)))
    j2 = float(np.sum(h * _toeplitz_right(config.h_spec(p), h)))
    return j1, j2


def penalty_grad_w(config: PenaltyConfig, w, x) -> np.ndarray:
    _check_shapes(w=w, x=x)
    fam = config.family
    if fam == NONE:
        return np.zeros_like(w)
    if fam == FROBENIUS:
        return 2.0 * w
    if fam == ZELLNER:
        return (2.0 / config.g) * (x @ (x.T @ w))
    return 2.0 * toeplitz_matmul(config.w_spec(x.shape[0]), w)


def penalty_grad_h(config: PenaltyConfig, h, x) -> np.ndarray:
    _check_shapes(h=h, x=x)
    fam = config.family
    if fam == NONE:
        return np.zeros_like(h)
    if fam == FROBENIUS:
        return 2.0 * h
    if fam == ZELLNER:
        return (2.0 / config.g) * ((h @ x.T) @ x)
    return 2.0 * _toeplitz_right(config.h_spec(x.shape[1]), h)


def _clamped_ratio(num: np.ndarray, den: np.ndarray, eps: float) -> tuple[np.ndarray, int]:
    return safe_divide(num, den, eps), int(np.count_nonzero(den < eps))


def update_w(model: FactorizationModel, x, config: PenaltyConfig, solver: SolverConfig) -> FactorizationModel:
    """One multiplicative step on W with H held fixed."""
    w, h = model.w, model.h
    _check_shapes(w, h, x)
    den = w @ (h @ h.T)
    if config.alpha != 0.0 and config.family != NONE:
        if config.family == ZELLNER:
            den = den + (config.alpha / config.g) * (x @ (x.T @ w))
        else:
            den = den + config.alpha * penalty_grad_w(config, w, x)
    ratio, clamped = _clamped_ratio(x @ h.T, den, solver.eps)
    return replace(model, w=w * ratio, clamp_count=model.clamp_count + clamped)


def update_h(model: FactorizationModel, x, config: PenaltyConfig, solver: SolverConfig) -> FactorizationModel:
    """One multiplicative step on H with (the already updated) W held fixed."""
    w, h = model.w, model.h
    _check_shapes(w, h, x)
    num = w.T @ x
    wtwh = (w.T @ w) @ h
    if config.family == ZELLNER:
        g = config.g
        den = g * wtwh
        if config.beta != 0.0:
            den = den + config.beta * ((h @ x.T) @ x)
        ratio, clamped = _clamped_ratio(num, den, solver.eps)
        new_h = g * h * ratio
    else:
        den = wtwh
        if config.beta != 0.0 and config.family != NONE:
            den = den + config.beta * penalty_grad_h(config, h, x)
        ratio, clamped = _clamped_ratio(num, den, solver.eps)
        new_h = h * ratio
    return replace(model, h=new_h, clamp_count=model.clamp_count + clamped)


def cost(model: FactorizationModel, x, config: PenaltyConfig) -> float:
    w, h = model.w, model.h
    _check_shapes(w, h, x)
    value = 0.5 * frobenius_norm_sq(x - w @ h)
    if config.family != NONE:
        j1, j2 = penalty_value(config, w, h, x)
        value += config.alpha * j1 + config.beta * j2
    return value


def run(
    x,
    k: int,
    config: PenaltyConfig | None = None,
    solver: SolverConfig | None = None,
    model: FactorizationModel | None = None,
    callback=None,
) -> FactorizationModel:
    """Alternate W and H updates from a seeded start until convergence.

    The cost is recorded at iteration 0, every ``check_every`` iterations and
    at the last iteration.  The run stops early once the relative change
    between consecutive recorded costs is at most ``rel_tol``.

    ``model`` overrides the seeded initialisation; ``callback(t, model)`` is
    invoked after every full iteration.
    """
    config = config or PenaltyConfig()
    solver = solver or SolverConfig()
    x = as_matrix(x, "X")
    if x.size and x.min() < 0:
        raise DomainError("X contains negative entries")
    n, p = x.shape
    if not 1 <= k <= min(n, p):
        raise ParameterError(f"rank k={k} must satisfy 1 <= k <= min({n}, {p})")
    if model is None:
        model = initialize(n, p, k, solver.seed)
    elif model.rank != k:
        raise ParameterError(f"initial model has rank {model.rank}, expected {k}")
    else:
        model = replace(model, cost_history=list(model.cost_history))
    _check_shapes(model.w, model.h, x)

    # Non-finite values are detected and reported below; numpy's own warnings are noise.
    with np.errstate(over="ignore", invalid="ignore"):
        history = model.cost_history
        history.append(cost(model, x, config))
        last = history[-1]
        for t in range(1, solver.max_iters + 1):
            model = update_w(model, x, config, solver)
            model = update_h(model, x, config, solver)
            model.iterations_run = t
            if not (np.isfinite(model.w).all() and np.isfinite(model.h).all()):
                raise NumericalError(f"non-finite factor entries at iteration {t}", t)
            if callback is not None:
                callback(t, model)
            if t % solver.check_every == 0 or t == solver.max_iters:
                c = cost(model, x, config)
                if not np.isfinite(c):
                    raise NumericalError(f"non-finite cost at iteration {t}", t)
                history.append(c)
                if abs(last - c) <= solver.rel_tol * max(abs(last), np.finfo(float).tiny):
                    break
                last = c
    if model.clamp_count:
        logger.warning("%d denominator entries clamped at eps=%g", model.clamp_count, solver.eps)
    return model
