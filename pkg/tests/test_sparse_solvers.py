from dataclasses import replace

import numpy as np
import pytest
from sklearn.linear_model import Lasso

from utils.sensing_operators import MatrixKind, gen_gaussian, gen_matrix, gen_noise, gen_sparse_signal
from utils.sparse_penalty import (
    CapabilityError,
    DivergenceError,
    ParameterError,
    Regularizer,
    SDiffPenalty,
    penalty_eval,
)
from utils.sparse_solvers import (
    AdmmConfig,
    BoundKind,
    LeastSquaresProblem,
    SolverConfig,
    SolveTrace,
    adaptive_s_update,
    admm_penalty,
    aiht_solve,
    check_descent_bound,
    dca_admm_solve,
    fbs_solve,
    fixed_point_residual,
    half_threshold,
    half_threshold_solve,
    initial_point,
    l12_dca_solve,
    l1_admm_solve,
    ls_gradient,
    ls_loss,
    pdca_solve,
    refined_descent_delta,
    rho_lower_bound,
    solve_with,
)

CLOSED_FORM_REGS = [
    Regularizer.l1(),
    Regularizer.l2_squared(),
    Regularizer.l2(),
    Regularizer.l1_minus_al2(1.0),
    Regularizer.lsp(1.0),
    Regularizer.mcp(2.0),
]

DCA_INNER = AdmmConfig(max_iter=500)


def _exact_problem(M, N, s_truth, seed, noise=0.0, kind=MatrixKind.GAUSSIAN):
    """Random instance with the Lipschitz constant taken from an SVD."""
    A = gen_matrix(kind, M, N, seed=seed).data
    x_true = gen_sparse_signal(N, s_truth, seed=seed + 1)
    b = A @ x_true + gen_noise(M, noise, seed=seed + 2)
    return LeastSquaresProblem(A, b, lipschitz=np.linalg.norm(A, 2) ** 2), x_true


def _collect():
    iterates = []

    def callback(k, x):
        iterates.append(x.copy())

    return iterates, callback


class TestLeastSquares:
    def test_gradient_identity(self):
        prob = LeastSquaresProblem(np.eye(2), np.array([1.0, 0.0]))
        np.testing.assert_array_equal(ls_gradient(prob, np.zeros(2)), [-1.0, 0.0])

    def test_gradient_vanishes_at_solution(self, small_problem):
        prob, x_true = small_problem
        np.testing.assert_allclose(ls_gradient(prob, x_true), 0.0, atol=1e-12)

    def test_gradient_finite_differences(self, rng):
        A = rng.standard_normal((6, 4))
        prob = LeastSquaresProblem(A, rng.standard_normal(6))
        x = rng.standard_normal(4)
        g = ls_gradient(prob, x)
        h = 1e-6
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            fd = (ls_loss(prob, x + e) - ls_loss(prob, x - e)) / (2 * h)
            assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-8)

    def test_gradient_shape(self, identity_problem):
        with pytest.raises(ParameterError):
            ls_gradient(identity_problem, np.zeros(3))

    def test_rejects_mismatched_b(self):
        with pytest.raises(ParameterError):
            LeastSquaresProblem(np.eye(2), np.zeros(3))

    def test_lipschitz_of_identity(self, identity_problem):
        assert identity_problem.lipschitz == pytest.approx(1.0, rel=1e-9)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"rho": 0.0},
            {"rho": 0.1, "step": -1.0},
            {"rho": 0.1, "max_iter": 0},
            {"rho": 0.1, "init": "random"},
            {"rho": 0.1, "rho_schedule": (1.0, 0.5)},
            {"rho": 0.1, "rho_schedule": ()},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            SolverConfig(**kwargs)

    def test_admm_mu(self):
        with pytest.raises(ParameterError):
            AdmmConfig(mu=0.0)

    def test_explicit_init_length(self, identity_problem):
        with pytest.raises(ParameterError):
            initial_point(identity_problem, SolverConfig(rho=0.1, init=np.zeros(3)))


class TestFbs:
    def test_exact_sparse_fit(self, identity_problem):
        trace = fbs_solve(identity_problem, SDiffPenalty(Regularizer.l1(), 1), SolverConfig(rho=0.1))
        assert trace.converged
        np.testing.assert_allclose(trace.solution, [5.0, 0.0], atol=1e-6)
        assert trace.objective_history[-1] == pytest.approx(0.0, abs=1e-10)
        assert trace.solver == "fbs"

    def test_zero_data(self):
        prob = LeastSquaresProblem(np.eye(3), np.zeros(3))
        trace = fbs_solve(prob, SDiffPenalty(Regularizer.l1(), 1), SolverConfig(rho=0.1))
        np.testing.assert_array_equal(trace.solution, np.zeros(3))
        assert trace.iterations == 1
        assert trace.converged

    def test_unsafe_step_rejected(self, identity_problem):
        with pytest.raises(ParameterError):
            fbs_solve(identity_problem, SDiffPenalty(Regularizer.l1(), 1), SolverConfig(rho=0.1, step=2.0))

    def test_scad_needs_dca(self, identity_problem):
        with pytest.raises(CapabilityError):
            fbs_solve(identity_problem, SDiffPenalty(Regularizer.scad(3.7), 1), SolverConfig(rho=0.1))

    def test_s_larger_than_n(self, identity_problem):
        with pytest.raises(ParameterError):
            fbs_solve(identity_problem, SDiffPenalty(Regularizer.l1(), 3), SolverConfig(rho=0.1))

    def test_descent_bound_holds(self, rng):
        # cycles through gaussian/dct and noiseless/noisy instances
        for run in range(50):
            reg = CLOSED_FORM_REGS[run % len(CLOSED_FORM_REGS)]
            kind = MatrixKind.GAUSSIAN if run % 2 == 0 else MatrixKind.PARTIAL_DCT
            noise = 0.01 if (run // 2) % 2 else 0.0
            prob, _ = _exact_problem(20, 40, 3, seed=100 + run, noise=noise, kind=kind)
            cfg = SolverConfig(rho=float(rng.uniform(0.01, 0.5)), max_iter=200)
            trace = fbs_solve(prob, SDiffPenalty(reg, 3), cfg)
            F = np.asarray(trace.objective_history)
            assert np.all(np.diff(F) <= 1e-10 * max(1.0, F[0]))
            assert check_descent_bound(trace, prob.lipschitz, 0.99 / prob.lipschitz)

    def test_overstepped_run_fails_descent_check(self):
        prob, _ = _exact_problem(20, 40, 3, seed=7)
        beta = 2.0 / prob.lipschitz
        cfg = SolverConfig(rho=0.1, step=beta, max_iter=10, allow_unsafe_step=True)
        trace = fbs_solve(prob, SDiffPenalty(Regularizer.l1(), 3), cfg)
        assert not check_descent_bound(trace, prob.lipschitz, beta)

    @pytest.mark.parametrize("reg", [Regularizer.l1(), Regularizer.l2_squared()], ids=["l1", "l2sq"])
    def test_refined_descent_bound(self, reg):
        for run in range(10):
            prob, _ = _exact_problem(20, 40, 3, seed=300 + run, noise=0.01)
            rho = 0.2
            penalty = SDiffPenalty(reg, 3)
            iterates, callback = _collect()
            trace = fbs_solve(prob, penalty, SolverConfig(rho=rho, max_iter=100), callback)
            xs = [np.zeros(prob.N)] + iterates
            F = trace.objective_history
            L = prob.lipschitz
            beta = 0.99 / L
            slack = 1e-9 * max(1.0, F[0])
            for k in range(len(iterates)):
                dx2 = float(np.sum((xs[k + 1] - xs[k]) ** 2))
                delta = refined_descent_delta(xs[k], xs[k + 1], penalty)
                bound = (L / 2 - 1 / (2 * beta)) * dx2 + min(-dx2 / (2 * beta) + rho * delta, 0.0)
                assert F[k + 1] - F[k] <= bound + slack

    def test_fixed_point_at_termination(self, small_problem):
        prob, _ = small_problem
        tol = 1e-8
        cfg = SolverConfig(rho=0.1, tol=tol, max_iter=5000)
        trace = fbs_solve(prob, SDiffPenalty(Regularizer.l1(), 4), cfg)
        assert trace.converged
        assert trace.fixed_point_residual <= 10 * tol * max(1.0, np.linalg.norm(trace.solution))

    def test_bit_reproducible(self, small_problem):
        prob, _ = small_problem
        cfg = SolverConfig(rho=0.1, tol=0.0, max_iter=50, init="l1_admm")
        penalty = SDiffPenalty(Regularizer.l1_minus_al2(1.0), 4)
        first = fbs_solve(prob, penalty, cfg)
        second = fbs_solve(prob, penalty, cfg)
        np.testing.assert_array_equal(first.solution, second.solution)
        assert first.objective_history == second.objective_history
        assert first.iterations == 50

    def test_continuation_reaches_feasibility(self, small_problem):
        prob, _ = small_problem
        penalty = SDiffPenalty(Regularizer.l1(), 4)
        cfg = SolverConfig(rho=0.1, max_iter=2000, rho_schedule=(0.1, 1.0, 10.0))
        trace = fbs_solve(prob, penalty, cfg)
        assert trace.solver == "fbs-continuation"
        assert penalty_eval(penalty, trace.solution) <= 1e-8
        assert len(trace.objective_history) == len(trace.step_norm_history) + 3
        assert sum(trace.stage_lengths) == len(trace.step_norm_history)

    def test_continuation_trace_passes_descent_check(self):
        prob, _ = _exact_problem(32, 64, 4, seed=41)
        cfg = SolverConfig(rho=0.05, max_iter=300, rho_schedule=(0.05, 0.5, 5.0))
        trace = fbs_solve(prob, SDiffPenalty(Regularizer.l1(), 4), cfg)
        assert len(trace.stage_lengths) == 3
        assert check_descent_bound(trace, prob.lipschitz, 0.99 / prob.lipschitz)

    def test_divergence_is_reported(self, small_problem):
        prob, _ = small_problem
        cfg = SolverConfig(rho=0.1, step=1e10 / prob.lipschitz, allow_unsafe_step=True)
        with pytest.raises(DivergenceError) as info:
            fbs_solve(prob, SDiffPenalty(Regularizer.l1(), 4), cfg)
        assert info.value.iteration >= 1
        assert info.value.solver == "fbs"

    def test_adaptive_s_history(self, small_problem):
        prob, _ = small_problem
        cfg = SolverConfig(rho=0.1, max_iter=300, adaptive_s=True, init="l1_admm")
        trace = fbs_solve(prob, SDiffPenalty(Regularizer.l1(), 10), cfg)
        assert len(trace.s_history) == trace.iterations + 1
        assert trace.s_history[0] == 10
        assert all(1 <= s <= prob.N for s in trace.s_history)


class TestDescentDiagnostics:
    def test_constant_trace(self):
        trace = SolveTrace(
            solution=np.zeros(2),
            objective_history=(1.0, 1.0, 1.0),
            step_norm_history=(0.0, 0.0),
            iterations=2,
            converged=True,
        )
        assert check_descent_bound(trace, L=1.0, beta=0.5)

    def test_stage_split_must_match_histories(self):
        trace = SolveTrace(
            solution=np.zeros(2),
            objective_history=(2.0, 1.0, 1.0),
            step_norm_history=(0.5, 0.0),
            iterations=2,
            converged=True,
            stage_lengths=(1, 1),
        )
        with pytest.raises(ParameterError):
            check_descent_bound(trace, L=1.0, beta=0.5)
        staged = replace(trace, objective_history=(2.0, 1.0, 3.0, 3.0))
        # the jump between stages comes from the larger rho, not from a step
        assert check_descent_bound(staged, L=1.0, beta=0.5)

    def test_refined_delta_examples(self):
        penalty = SDiffPenalty(Regularizer.l1(), 1)
        assert refined_descent_delta([3.0, 2.0], [2.0, 3.0], penalty) == 1.0
        assert refined_descent_delta([3.0, 2.0], [4.0, 1.0], penalty) == 0.0
        assert refined_descent_delta([0.0, 0.0], [2.0, 3.0], penalty) == 0.0

    def test_refined_delta_needs_separable(self):
        with pytest.raises(CapabilityError):
            refined_descent_delta([1.0, 2.0], [2.0, 1.0], SDiffPenalty(Regularizer.l2(), 1))

    def test_fixed_point_residual_at_solution(self, identity_problem):
        penalty = SDiffPenalty(Regularizer.l1(), 1)
        assert fixed_point_residual(identity_problem, penalty, 0.1, 0.99, [5.0, 0.0]) == 0.0


class TestDca:
    def test_pdca_exact_fit(self, identity_problem):
        trace = pdca_solve(identity_problem, SDiffPenalty(Regularizer.l1(), 1), SolverConfig(rho=0.1))
        assert trace.converged
        np.testing.assert_allclose(trace.solution, [5.0, 0.0], atol=1e-6)

    def test_pdca_zero_data(self):
        prob = LeastSquaresProblem(np.eye(3), np.zeros(3))
        trace = pdca_solve(prob, SDiffPenalty(Regularizer.l2_squared(), 1), SolverConfig(rho=0.1))
        np.testing.assert_array_equal(trace.solution, np.zeros(3))

    def test_dca_admm_exact_fit(self, identity_problem):
        trace = dca_admm_solve(
            identity_problem, SDiffPenalty(Regularizer.l1(), 1), SolverConfig(rho=0.1), DCA_INNER
        )
        assert trace.converged
        np.testing.assert_allclose(trace.solution, [5.0, 0.0], atol=1e-6)

    def test_dca_admm_zero_data(self):
        prob = LeastSquaresProblem(np.eye(3), np.zeros(3))
        trace = dca_admm_solve(prob, SDiffPenalty(Regularizer.l2(), 1), SolverConfig(rho=0.1), DCA_INNER)
        np.testing.assert_array_equal(trace.solution, np.zeros(3))

    def test_generalized_mcp(self, identity_problem):
        trace = dca_admm_solve(
            identity_problem,
            SDiffPenalty(Regularizer.mcp(5.0), 1),
            SolverConfig(rho=0.1),
            DCA_INNER,
            generalized=True,
        )
        assert trace.solver == "dca_admm_generalized"
        np.testing.assert_allclose(trace.solution, [5.0, 0.0], atol=1e-6)

    def test_generalized_scad_runs(self, small_problem):
        prob, _ = small_problem
        trace = dca_admm_solve(
            prob,
            SDiffPenalty(Regularizer.scad(3.7), 4),
            SolverConfig(rho=0.1),
            AdmmConfig(max_outer=5),
            generalized=True,
        )
        assert np.all(np.isfinite(trace.solution))
        assert trace.iterations <= 5
        assert np.isnan(trace.fixed_point_residual)

    def test_exact_split_needs_elementary_prox(self, identity_problem):
        with pytest.raises(CapabilityError):
            dca_admm_solve(identity_problem, SDiffPenalty(Regularizer.mcp(2.0), 1), SolverConfig(rho=0.1))


class TestBaselines:
    def test_l1_admm_identity(self, identity_problem):
        np.testing.assert_allclose(l1_admm_solve(identity_problem, 0.5, 200), [4.5, 0.0], atol=1e-8)

    def test_l1_admm_without_penalty_is_least_squares(self):
        A = gen_gaussian(30, 10, seed=3).data
        b = np.random.default_rng(4).standard_normal(30)
        prob = LeastSquaresProblem(A, b)
        expected = np.linalg.lstsq(A, b, rcond=None)[0]
        np.testing.assert_allclose(l1_admm_solve(prob, 0.0, 500), expected, atol=1e-8)

    def test_l1_admm_zero_data(self):
        prob = LeastSquaresProblem(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(l1_admm_solve(prob, 0.5, 10), np.zeros(3))

    def test_l1_admm_matches_sklearn_lasso(self):
        A = gen_gaussian(30, 10, seed=5).data
        b = np.random.default_rng(6).standard_normal(30)
        rho = 0.1
        lasso = Lasso(alpha=rho / 30, fit_intercept=False, tol=1e-12, max_iter=100000)
        lasso.fit(A, b)
        ours = l1_admm_solve(LeastSquaresProblem(A, b), rho, 2000)
        np.testing.assert_allclose(ours, lasso.coef_, atol=1e-6)

    def test_admm_penalty_follows_rho(self):
        assert admm_penalty(1e-6) == pytest.approx(1e-5)
        assert admm_penalty(1e-3) == pytest.approx(1e-2)
        assert admm_penalty(0.0) == 1.0
        assert admm_penalty(0.3, mu=2.0) == 2.0

    def test_l1_admm_explicit_mu_keeps_fixed_point(self, identity_problem):
        np.testing.assert_allclose(l1_admm_solve(identity_problem, 0.5, 300, mu=1.0), [4.5, 0.0], atol=1e-8)

    def test_l1_admm_rejects_arguments(self, identity_problem):
        with pytest.raises(ParameterError):
            l1_admm_solve(identity_problem, -1.0, 10)
        with pytest.raises(ParameterError):
            l1_admm_solve(identity_problem, 0.1, 0)

    def test_l12_dca_identity(self, identity_problem):
        trace = l12_dca_solve(identity_problem, 0.1, SolverConfig(rho=0.1), DCA_INNER)
        np.testing.assert_allclose(trace.solution, [5.0, 0.0], atol=1e-6)

    def test_l12_dca_zero_data(self):
        prob = LeastSquaresProblem(np.eye(3), np.zeros(3))
        trace = l12_dca_solve(prob, 0.1, SolverConfig(rho=0.1), DCA_INNER)
        np.testing.assert_array_equal(trace.solution, np.zeros(3))

    def test_aiht_hard_thresholds(self):
        prob = LeastSquaresProblem(np.eye(3), np.array([5.0, 0.1, 0.0]))
        trace = aiht_solve(prob, 1, SolverConfig(rho=1.0))
        np.testing.assert_allclose(trace.solution, [5.0, 0.0, 0.0], atol=1e-4)
        assert trace.solution[1] == 0.0

    def test_aiht_rejects_s(self, identity_problem):
        with pytest.raises(ParameterError):
            aiht_solve(identity_problem, 3, SolverConfig(rho=1.0))

    def test_half_threshold_is_scalar_minimizer(self):
        grid = np.linspace(-5.0, 5.0, 200001)
        for lam in (0.5, 1.0, 2.0):
            penalty = lam * np.sqrt(np.abs(grid))
            z = np.linspace(-4.0, 4.0, 81)
            t = half_threshold(z, lam)
            for zi, ti in zip(z, t):
                best = float(np.min((grid - zi) ** 2 + penalty))
                assert (ti - zi) ** 2 + lam * np.sqrt(abs(ti)) <= best + 1e-8

    def test_half_threshold_zero_data(self):
        prob = LeastSquaresProblem(np.eye(3), np.zeros(3))
        trace = half_threshold_solve(prob, 0.1, SolverConfig(rho=0.1))
        np.testing.assert_array_equal(trace.solution, np.zeros(3))

    def test_half_threshold_large_rho(self):
        prob = LeastSquaresProblem(np.eye(2), np.array([1.0, 0.5]))
        trace = half_threshold_solve(prob, 100.0, SolverConfig(rho=100.0))
        np.testing.assert_array_equal(trace.solution, np.zeros(2))


class TestAdaptiveS:
    def test_example(self):
        assert adaptive_s_update([5.0, 0.2, 0.0, 0.0], [4.0, 1.0, 0.05, 0.0], 2, 0.5) == 1

    def test_stationary(self):
        x = [3.0, 2.0, 0.1, 0.0]
        assert adaptive_s_update(x, x, 2, 1.0) == 2

    def test_clamped_to_one(self):
        assert adaptive_s_update(np.zeros(4), [1.0, 0.5, 0.0, 0.0], 2, 0.1) == 1

    def test_invalid(self):
        with pytest.raises(ParameterError):
            adaptive_s_update([1.0, 2.0], [1.0, 2.0], 3, 0.1)
        with pytest.raises(ParameterError):
            adaptive_s_update([1.0, 2.0], [1.0, 2.0], 1, 0.0)


class TestRhoBounds:
    def test_l1(self):
        assert rho_lower_bound(BoundKind.L1, beta=2.0) == 2.0

    def test_least_squares_l1(self):
        value = rho_lower_bound(BoundKind.LEAST_SQUARES_L1, atb=1.0, a2=1.0, C=1.0, s=1)
        assert value == pytest.approx(2.353553, abs=1e-6)

    def test_l1l2(self):
        assert rho_lower_bound("l1l2", beta=1.0, a=1.0, s=4) == pytest.approx(4.0 / 3.0)

    def test_lsp(self):
        assert rho_lower_bound(BoundKind.LSP, beta=1.0, theta1=3.0, theta2=1.0) == 0.5

    def test_gradient(self):
        value = rho_lower_bound(BoundKind.GRADIENT_LIPSCHITZ, grad0=0.0, L=2.0, C=1.0, eta=1.0, s=3)
        assert value == pytest.approx(2.0 * (1.0 + 1.0 / 4.0))

    @pytest.mark.parametrize(
        "kind, inputs",
        [
            (BoundKind.L1, {}),
            (BoundKind.L1, {"beta": -1.0}),
            (BoundKind.L1L2, {"beta": 1.0, "a": 1.5, "s": 2}),
            (BoundKind.L1L2, {"beta": 1.0, "a": 0.5, "s": 1.5}),
            (BoundKind.LSP, {"beta": 1.0, "theta1": 1.0, "theta2": 2.0}),
            (BoundKind.LEAST_SQUARES_L1, {"atb": -1.0, "a2": 1.0, "C": 1.0, "s": 1}),
        ],
    )
    def test_invalid(self, kind, inputs):
        with pytest.raises(ParameterError):
            rho_lower_bound(kind, **inputs)


class TestDispatch:
    def test_unknown_method(self, identity_problem):
        with pytest.raises(ParameterError):
            solve_with("gist", identity_problem, SolverConfig(rho=0.1))

    def test_penalty_required(self, identity_problem):
        with pytest.raises(ParameterError):
            solve_with("fbs", identity_problem, SolverConfig(rho=0.1))

    def test_aiht_needs_s(self, identity_problem):
        with pytest.raises(ParameterError):
            solve_with("aiht", identity_problem, SolverConfig(rho=0.1))

    def test_aiht_takes_s_from_penalty(self):
        prob = LeastSquaresProblem(np.eye(3), np.array([5.0, 0.1, 0.0]))
        trace = solve_with("aiht", prob, SolverConfig(rho=1.0), penalty=SDiffPenalty(Regularizer.l1(), 1))
        assert trace.s_history == (1,)

    def test_l1_admm_trace(self, identity_problem):
        seen = []
        trace = solve_with(
            "l1_admm",
            identity_problem,
            SolverConfig(rho=0.5, max_iter=200),
            callback=lambda k, x: seen.append(k),
        )
        np.testing.assert_allclose(trace.solution, [4.5, 0.0], atol=1e-8)
        assert trace.converged and trace.iterations == 200
        assert seen == [200]

    def test_dca_methods_use_inner_settings(self, identity_problem):
        trace = solve_with(
            "dca_admm",
            identity_problem,
            SolverConfig(rho=0.1),
            penalty=SDiffPenalty(Regularizer.l1(), 1),
            inner=DCA_INNER,
        )
        np.testing.assert_allclose(trace.solution, [5.0, 0.0], atol=1e-6)
