import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tnmf.errors import DomainError, NumericalError, ParameterError, ShapeError
from tnmf.factorization import (
    FROBENIUS,
    NONE,
    TOEPLITZ,
    ZELLNER,
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
from tnmf.toeplitz import DAMPED_ALTERNATING

CONFIGS = {
    "none": PenaltyConfig(),
    "frobenius": PenaltyConfig(FROBENIUS, 0.3, 0.7),
    "zellner": PenaltyConfig(ZELLNER, 0.3, 0.7, g=83.0),
    "toeplitz-geometric": PenaltyConfig(TOEPLITZ, 0.3, 0.7, rho=0.4),
    "toeplitz-damped": PenaltyConfig(TOEPLITZ, 0.3, 0.7, toeplitz_kind=DAMPED_ALTERNATING, rho=0.8, nu=1.0),
}


def m(values):
    return np.array(values, dtype=float)


def fd_gradient(f, a, step=1e-6):
    """Central finite differences of scalar f at every entry of a."""
    grad = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        plus, minus = a.copy(), a.copy()
        plus[idx] += step
        minus[idx] -= step
        grad[idx] = (f(plus) - f(minus)) / (2 * step)
    return grad


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestInitialize:
    def test_deterministic(self):
        a, b = initialize(10, 8, 3, seed=7), initialize(10, 8, 3, seed=7)
        np.testing.assert_array_equal(a.w, b.w)
        np.testing.assert_array_equal(a.h, b.h)

    def test_seed_changes_w(self):
        assert np.any(initialize(10, 8, 3, 1).w != initialize(10, 8, 3, 2).w)

    def test_strictly_positive_in_unit_interval(self):
        model = initialize(200, 100, 10, seed=0)
        for a in (model.w, model.h):
            assert a.min() > 0 and a.max() <= 1
        assert model.cost_history == []

    @pytest.mark.parametrize("k", [0, 9])
    def test_rank_range(self, k):
        with pytest.raises(ParameterError):
            initialize(10, 8, k, 0)


class TestPenaltyConfig:
    def test_ranges(self):
        with pytest.raises(ParameterError):
            PenaltyConfig(FROBENIUS, 1.5, 0.0)
        with pytest.raises(ParameterError):
            PenaltyConfig(ZELLNER, 0.5, 0.5)
        with pytest.raises(ValueError):
            PenaltyConfig(TOEPLITZ, 0.5, 0.5, rho=2.0)

    @given(st.sampled_from([round(0.01 * i, 2) for i in range(101)]))
    def test_linkage_sums_to_one(self, alpha):
        cfg = PenaltyConfig.linked(FROBENIUS, alpha)
        assert cfg.alpha + cfg.beta == 1.0

    def test_g_preset(self):
        assert zellner_g_preset(644, 200) == 40000
        assert zellner_g_preset(4880, 90) == 8100


class TestPenaltyValue:
    def test_frobenius(self):
        assert penalty_value(CONFIGS["frobenius"], m([[3], [4]]), m([[1, 2]]), np.ones((2, 2))) == (25.0, 5.0)

    def test_none(self):
        assert penalty_value(PenaltyConfig(), m([[3], [4]]), m([[1, 2]]), np.ones((2, 2))) == (0.0, 0.0)

    def test_zellner_decreases_in_g(self, rng):
        w, h, x = rng.random((6, 2)), rng.random((2, 5)), rng.random((6, 5))
        vals = [penalty_value(PenaltyConfig(ZELLNER, 0.5, 0.5, g=g), w, h, x) for g in (1, 10, 100, 1e4, 1e8)]
        for (a1, a2), (b1, b2) in zip(vals, vals[1:]):
            assert b1 < a1 and b2 < a2
        assert vals[-1][0] < 1e-6

    def test_zellner_trace_form(self, rng):
        w, h, x = rng.random((6, 2)), rng.random((2, 5)), rng.random((6, 5))
        j1, j2 = penalty_value(PenaltyConfig(ZELLNER, 0.5, 0.5, g=3.0), w, h, x)
        assert j1 == pytest.approx(np.trace(w.T @ x @ x.T @ w) / 3.0, rel=1e-12)
        assert j2 == pytest.approx(np.trace(h @ x.T @ x @ h.T) / 3.0, rel=1e-12)

    def test_toeplitz_rho_zero_equals_frobenius(self, rng):
        w, h, x = rng.random((6, 2)), rng.random((2, 5)), rng.random((6, 5))
        t = penalty_value(PenaltyConfig(TOEPLITZ, 0.5, 0.5, rho=0.0), w, h, x)
        assert t == penalty_value(CONFIGS["frobenius"], w, h, x)

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            penalty_value(CONFIGS["frobenius"], rng.random((5, 2)), rng.random((2, 5)), rng.random((6, 5)))


class TestGradients:
    def test_frobenius_examples(self):
        np.testing.assert_array_equal(penalty_grad_w(CONFIGS["frobenius"], m([[1, 2]]), np.ones((1, 3))), [[2, 4]])
        np.testing.assert_array_equal(penalty_grad_h(CONFIGS["frobenius"], m([[0, 3]]), np.ones((4, 2))), [[0, 6]])

    def test_toeplitz_rho_zero(self, rng):
        cfg = PenaltyConfig(TOEPLITZ, 0.5, 0.5, rho=0.0)
        w, h, x = rng.random((10, 3)), rng.random((3, 8)), rng.random((10, 8))
        np.testing.assert_array_equal(penalty_grad_w(cfg, w, x), 2 * w)
        np.testing.assert_array_equal(penalty_grad_h(cfg, h, x), penalty_grad_h(CONFIGS["frobenius"], h, x))

    def test_none_is_zero(self, rng):
        w, h, x = rng.random((4, 2)), rng.random((2, 3)), rng.random((4, 3))
        assert not penalty_grad_w(PenaltyConfig(), w, x).any()
        assert not penalty_grad_h(PenaltyConfig(), h, x).any()

    @pytest.mark.parametrize("name", [n for n in CONFIGS if n != "none"])
    def test_finite_differences(self, rng, name):
        cfg = CONFIGS[name]
        w, h, x = rng.random((10, 4)), rng.random((4, 10)), rng.random((10, 10))
        fd_w = fd_gradient(lambda a: penalty_value(cfg, a, h, x)[0], w)
        fd_h = fd_gradient(lambda a: penalty_value(cfg, w, a, x)[1], h)
        assert rel_err(penalty_grad_w(cfg, w, x), fd_w) < 1e-5
        assert rel_err(penalty_grad_h(cfg, h, x), fd_h) < 1e-5


class TestUpdates:
    solver = SolverConfig()

    def test_scalar_plain_w(self):
        model = FactorizationModel(w=m([[0.5]]), h=m([[1.0]]))
        assert update_w(model, m([[1.0]]), PenaltyConfig(), self.solver).w[0, 0] == 1.0

    def test_scalar_plain_h(self):
        model = FactorizationModel(w=m([[1.0]]), h=m([[1.0]]))
        assert update_h(model, m([[2.0]]), PenaltyConfig(), self.solver).h[0, 0] == 2.0

    def test_scalar_zellner_w(self):
        # 0.5 * 1 / (0.5 + (0.5 / 1) * 1 * 0.5) = 2/3
        model = FactorizationModel(w=m([[0.5]]), h=m([[1.0]]))
        cfg = PenaltyConfig(ZELLNER, 0.5, 0.5, g=1.0)
        assert update_w(model, m([[1.0]]), cfg, self.solver).w[0, 0] == pytest.approx(2 / 3, rel=1e-15)

    def test_scalar_zellner_h(self):
        # g H [W^T X / (g W^T W H + beta H X^T X)] = 2 * 0.5 * 1 / (2 * 0.5 + 1 * 0.5 * 1) = 2/3
        model = FactorizationModel(w=m([[1.0]]), h=m([[0.5]]))
        cfg = PenaltyConfig(ZELLNER, 0.0, 1.0, g=2.0)
        assert update_h(model, m([[1.0]]), cfg, self.solver).h[0, 0] == pytest.approx(2 / 3, rel=1e-15)

    def test_scalar_frobenius_uses_full_gradient(self):
        # denominator W H H^T + alpha * 2W = 0.5 + 0.25 * 1.0
        model = FactorizationModel(w=m([[0.5]]), h=m([[1.0]]))
        cfg = PenaltyConfig(FROBENIUS, 0.25, 0.0)
        assert update_w(model, m([[1.0]]), cfg, self.solver).w[0, 0] == pytest.approx(0.5 / 0.75)

    @pytest.mark.parametrize("name", ["none", "frobenius", "zellner"])
    def test_fixed_point(self, rng, name):
        cfg = CONFIGS[name]
        cfg = PenaltyConfig(cfg.family, 0.0, 0.0, g=cfg.g)
        w, h = rng.random((6, 2)) + 0.1, rng.random((2, 5)) + 0.1
        x = w @ h
        model = FactorizationModel(w=w, h=h)
        np.testing.assert_allclose(update_w(model, x, cfg, self.solver).w, w, rtol=1e-13)
        np.testing.assert_allclose(update_h(model, x, cfg, self.solver).h, h, rtol=1e-13)

    @pytest.mark.parametrize("name", list(CONFIGS))
    def test_nonnegativity(self, rng, name):
        x = rng.random((20, 15))
        model = initialize(20, 15, 4, seed=3)
        for _ in range(50):
            model = update_w(model, x, CONFIGS[name], self.solver)
            assert model.w.min() >= 0
            model = update_h(model, x, CONFIGS[name], self.solver)
            assert model.h.min() >= 0

    def test_damped_kind_clamps_and_stays_nonnegative(self):
        # rho = 1, nu small: large negative off-diagonals drive denominators negative.
        cfg = PenaltyConfig(TOEPLITZ, 1.0, 1.0, toeplitz_kind=DAMPED_ALTERNATING, rho=1.0, nu=0.05)
        x = np.random.default_rng(4).random((30, 20))
        model = run(x, 3, cfg, SolverConfig(max_iters=30, rel_tol=0))
        assert model.w.min() >= 0 and model.h.min() >= 0
        assert model.clamp_count > 0


class TestCost:
    def test_exact_is_zero(self, rng):
        w, h = rng.random((4, 2)), rng.random((2, 3))
        assert cost(FactorizationModel(w, h), w @ h, PenaltyConfig()) == 0.0

    def test_scalar(self):
        assert cost(FactorizationModel(m([[1]]), m([[1]])), m([[2]]), PenaltyConfig()) == 0.5

    @pytest.mark.parametrize("name", list(CONFIGS))
    def test_composition(self, rng, name):
        cfg = CONFIGS[name]
        w, h, x = rng.random((7, 3)), rng.random((3, 5)), rng.random((7, 5))
        j1, j2 = penalty_value(cfg, w, h, x)
        base = 0.5 * np.sum((x - w @ h) ** 2)
        assert cost(FactorizationModel(w, h), x, cfg) == pytest.approx(base + cfg.alpha * j1 + cfg.beta * j2, rel=1e-12)


def trajectory(x, k, cfg, iters, seed):
    out = []
    run(x, k, cfg, SolverConfig(max_iters=iters, rel_tol=0, seed=seed),
        callback=lambda t, mod: out.append((mod.w.copy(), mod.h.copy())))
    return out


def max_traj_diff(a, b):
    return max(max(np.abs(p[0] - q[0]).max(), np.abs(p[1] - q[1]).max()) for p, q in zip(a, b))


class TestRun:
    def test_rank_one_exact(self):
        rng = np.random.default_rng(2)
        x = np.outer(rng.random(12) + 0.1, rng.random(9) + 0.1)
        model = run(x, 1, solver=SolverConfig(max_iters=500, rel_tol=0))
        assert 2 * model.cost_history[-1] < 1e-8 * np.sum(x ** 2)

    def test_monotone(self):
        for seed in range(5):
            x = np.random.default_rng(seed).random((50, 30))
            hist = run(x, 5, solver=SolverConfig(max_iters=200, rel_tol=0, check_every=1, seed=seed)).cost_history
            assert np.all(np.diff(hist) <= 1e-10)

    def test_history_checkpoints(self, rng):
        model = run(rng.random((10, 8)), 2, solver=SolverConfig(max_iters=35, rel_tol=0, check_every=10))
        # iteration 0, 10, 20, 30 and the final 35
        assert len(model.cost_history) == 5
        assert model.iterations_run == 35

    def test_early_stop(self, rng):
        model = run(rng.random((10, 8)), 2, solver=SolverConfig(max_iters=100000, rel_tol=1e-4))
        assert model.iterations_run < 100000

    def test_deterministic(self, rng):
        x = rng.random((15, 10))
        cfg = CONFIGS["toeplitz-geometric"]
        a = run(x, 3, cfg, SolverConfig(seed=9))
        b = run(x, 3, cfg, SolverConfig(seed=9))
        assert a.cost_history == b.cost_history
        np.testing.assert_array_equal(a.w, b.w)

    @pytest.mark.parametrize("other,reference", [
        (PenaltyConfig(FROBENIUS, 0.0, 0.0), PenaltyConfig()),
        (PenaltyConfig(ZELLNER, 0.0, 0.0, g=83.0), PenaltyConfig()),
        (PenaltyConfig(TOEPLITZ, 0.3, 0.7, rho=0.0), PenaltyConfig(FROBENIUS, 0.3, 0.7)),
    ])
    def test_reductions(self, other, reference):
        x = np.random.default_rng(5).random((30, 20))
        assert max_traj_diff(trajectory(x, 4, other, 100, 1), trajectory(x, 4, reference, 100, 1)) <= 1e-12

    def test_negative_input(self):
        with pytest.raises(DomainError):
            run(-np.ones((3, 3)), 1)

    def test_rank_out_of_range(self):
        with pytest.raises(ParameterError):
            run(np.ones((3, 4)), 4)

    def test_numerical_failure_reports_iteration(self):
        x = np.full((4, 4), 1e200)
        with pytest.raises(NumericalError) as info:
            run(x, 2, solver=SolverConfig(max_iters=50))
        assert info.value.iteration >= 1

    def test_explicit_model(self, rng):
        x = rng.random((8, 6))
        start = initialize(8, 6, 2, seed=11)
        a = run(x, 2, model=start, solver=SolverConfig(max_iters=20, rel_tol=0))
        b = run(x, 2, solver=SolverConfig(max_iters=20, rel_tol=0, seed=11))
        np.testing.assert_array_equal(a.w, b.w)
        assert start.cost_history == []
