import numpy as np
import pytest

from utils.proximal_operators import (
    ProxProblem,
    has_closed_form,
    prox_gap,
    prox_l1,
    prox_l1_minus_al2,
    prox_l2,
    prox_l2sq,
    prox_lsp,
    prox_mcp,
    prox_objective,
    prox_oracle,
    prox_sdiff,
    shrink,
)
from utils.sparse_penalty import (
    CapabilityError,
    ParameterError,
    Regularizer,
    SDiffPenalty,
    top_mask,
)


def _closed_form_regs(rng):
    """One instance of every closed-form kind with randomized parameters."""
    return [
        Regularizer.l1(),
        Regularizer.l2_squared(),
        Regularizer.l2(),
        Regularizer.l1_minus_al2(float(rng.uniform(0.0, 1.0))),
        Regularizer.l1_minus_al2(1.0),
        Regularizer.lsp(float(rng.uniform(0.2, 3.0))),
        Regularizer.mcp(float(rng.uniform(0.2, 3.0))),
    ]


def _random_problem(rng, reg, n_low=2, n_high=5):
    n = int(rng.integers(n_low, n_high + 1))
    s = int(rng.integers(1, n + 1))
    lam = float(rng.uniform(0.05, 2.0))
    y = 3.0 * rng.standard_normal(n)
    return ProxProblem(SDiffPenalty(reg, s), lam, y)


class TestShrink:
    @pytest.mark.parametrize("v, lam, expected", [(-1.0, 1.0, 0.0), (3.0, 1.0, 2.0), (0.5, 1.0, 0.0)])
    def test_scalar(self, v, lam, expected):
        assert shrink(v, lam) == expected

    def test_vector(self):
        np.testing.assert_array_equal(shrink(np.array([-3.0, 0.2, 2.0]), 1.0), [-2.0, 0.0, 1.0])

    def test_negative_threshold(self):
        with pytest.raises(ParameterError):
            shrink(1.0, -0.1)


class TestClosedForms:
    def test_l1(self):
        np.testing.assert_array_equal(prox_l1(1, 1.0, [3.0, -1.0, 0.5]), [3.0, 0.0, 0.0])

    def test_l1_two_terms(self):
        np.testing.assert_allclose(prox_l1(2, 0.2, [3.0, -1.0, 0.5]), [3.0, -1.0, 0.3])

    def test_l1_zero_step(self):
        y = np.array([3.0, -1.0, 0.5])
        np.testing.assert_array_equal(prox_l1(1, 0.0, y), y)

    def test_l1_full_support(self):
        y = np.array([3.0, -1.0, 0.5])
        np.testing.assert_array_equal(prox_sdiff(ProxProblem(SDiffPenalty(Regularizer.l1(), 3), 1.0, y)), y)

    def test_l2sq(self):
        np.testing.assert_allclose(prox_l2sq(1, 1.0, [2.0, 1.0, -0.6]), [2.0, 1.0 / 3.0, -0.2])

    def test_l2sq_zero_step(self):
        y = np.array([2.0, 1.0, -0.6])
        np.testing.assert_array_equal(prox_l2sq(1, 0.0, y), y)

    def test_l2(self):
        np.testing.assert_allclose(prox_l2(1, 1.0, [2.0, 1.0]), [2.051317, 0.683772], atol=1e-6)

    def test_l2_sparse_input_is_fixed(self):
        np.testing.assert_array_equal(prox_l2(1, 1.0, [2.0, 0.0]), [2.0, 0.0])

    def test_l1_minus_l2_rescaling_case(self):
        x = prox_l1_minus_al2(1.0, 1, 0.5, [3.0, 2.0, 0.2])
        np.testing.assert_allclose(x, [2.928746, 1.757248, 0.0], atol=1e-6)

    def test_l1_minus_l2_below_threshold(self):
        np.testing.assert_array_equal(prox_l1_minus_al2(1.0, 1, 1.0, [3.0, 0.5]), [3.0, 0.0])

    def test_l1_minus_l2_degenerate_case(self):
        # s = 1, a = 1, |y_(1)| = lam: the canonical minimizer keeps y^s
        np.testing.assert_array_equal(prox_l1_minus_al2(1.0, 1, 1.0, [1.0, -1.0, 0.5]), [1.0, 0.0, 0.0])

    def test_l1_minus_l2_rejects_a(self):
        with pytest.raises(ParameterError):
            prox_l1_minus_al2(1.2, 1, 1.0, [1.0, 2.0])

    def test_mcp_firm_threshold(self):
        np.testing.assert_allclose(prox_mcp(2.0, 1, 1.0, [3.0, 0.5, 1.5]), [3.0, 0.0, 1.0])

    def test_mcp_hard_threshold(self):
        np.testing.assert_array_equal(prox_mcp(0.5, 1, 1.0, [3.0, 0.4]), [3.0, 0.0])
        # above sqrt(lam * theta) the entry survives untouched
        np.testing.assert_array_equal(prox_mcp(0.5, 1, 1.0, [3.0, 0.8]), [3.0, 0.8])

    def test_mcp_at_theta_keeps_entry(self):
        np.testing.assert_array_equal(prox_mcp(2.0, 1, 1.0, [3.0, 2.0]), [3.0, 2.0])

    def test_lsp(self):
        x = prox_lsp(1.0, 1, 0.1, [5.0, 2.0])
        assert x[0] == 5.0
        assert x[1] == pytest.approx((1.0 + np.sqrt(8.6)) / 2.0, abs=1e-12)
        assert x[1] == pytest.approx(1.96629, abs=1e-5)

    def test_lsp_matches_grid(self):
        grid = np.linspace(0.0, 2.0, 200001)
        values = (grid - 2.0) ** 2 / 0.2 + np.log1p(grid)
        x = prox_lsp(1.0, 1, 0.1, [5.0, 2.0])
        assert x[1] == pytest.approx(grid[np.argmin(values)], abs=1e-4)

    def test_lsp_large_theta(self):
        x = prox_lsp(1e6, 1, 1.0, [3.0, 2.0])
        assert x[1] == pytest.approx(2.0, abs=1e-4)

    @pytest.mark.parametrize(
        "reg",
        [
            Regularizer.l1(),
            Regularizer.l2_squared(),
            Regularizer.l2(),
            Regularizer.l1_minus_al2(0.7),
            Regularizer.lsp(1.0),
            Regularizer.mcp(2.0),
        ],
    )
    def test_zero_input(self, reg):
        p = ProxProblem(SDiffPenalty(reg, 1), 1.0, np.zeros(3))
        np.testing.assert_array_equal(prox_sdiff(p), np.zeros(3))

    def test_scad_has_no_closed_form(self):
        penalty = SDiffPenalty(Regularizer.scad(3.7), 1)
        assert not has_closed_form(penalty)
        with pytest.raises(CapabilityError):
            prox_sdiff(ProxProblem(penalty, 1.0, np.array([1.0, 2.0])))

    @pytest.mark.parametrize("lam", [0.0, -1.0, np.inf])
    def test_invalid_lambda(self, lam):
        with pytest.raises(ParameterError):
            ProxProblem(SDiffPenalty(Regularizer.l1(), 1), lam, np.array([1.0, 2.0]))


class TestStructure:
    def test_zero_iff_zero(self, rng):
        for _ in range(500):
            for reg in _closed_form_regs(rng):
                p = _random_problem(rng, reg, 2, 8)
                assert np.any(prox_sdiff(p) != 0.0)

    def test_sign_and_magnitude_order(self, rng):
        for _ in range(300):
            for reg in _closed_form_regs(rng):
                p = _random_problem(rng, reg, 2, 8)
                x = prox_sdiff(p)
                assert np.all(x * p.y >= 0.0)
                ay, ax = np.abs(p.y), np.abs(x)
                bigger = ay[:, None] > ay[None, :]
                assert np.all((ax[:, None] >= ax[None, :] - 1e-12)[bigger])

    def test_top_entries_anchored(self, rng):
        for _ in range(300):
            for reg in _closed_form_regs(rng):
                if not reg.is_separable:
                    continue
                p = _random_problem(rng, reg, 2, 8)
                mask = top_mask(p.y, p.penalty.s)
                np.testing.assert_array_equal(prox_sdiff(p)[mask], p.y[mask])

    def test_a_zero_reduces_to_l1(self, rng):
        for _ in range(500):
            n = int(rng.integers(2, 9))
            s = int(rng.integers(1, n + 1))
            lam = float(rng.uniform(0.05, 2.0))
            y = 3.0 * rng.standard_normal(n)
            np.testing.assert_array_equal(prox_l1_minus_al2(0.0, s, lam, y), prox_l1(s, lam, y))

    def test_sparse_fixed_point(self, rng):
        for _ in range(100):
            for reg in _closed_form_regs(rng):
                n = int(rng.integers(2, 8))
                s = int(rng.integers(1, n + 1))
                y = np.zeros(n)
                y[rng.permutation(n)[:s]] = 3.0 * rng.standard_normal(s)
                p = ProxProblem(SDiffPenalty(reg, s), float(rng.uniform(0.05, 2.0)), y)
                np.testing.assert_array_equal(prox_sdiff(p), y)


class TestOracle:
    def test_matches_l1_example(self):
        p = ProxProblem(SDiffPenalty(Regularizer.l1(), 1), 1.0, np.array([3.0, -1.0, 0.5]))
        closed = prox_sdiff(p)
        oracle = prox_oracle(p, budget=1000)
        assert prox_objective(p, oracle) == pytest.approx(prox_objective(p, closed), abs=1e-6)
        assert prox_gap(p, closed, oracle) <= 1e-6

    def test_zero_input(self):
        p = ProxProblem(SDiffPenalty(Regularizer.lsp(1.0), 1), 1.0, np.zeros(3))
        np.testing.assert_array_equal(prox_oracle(p, budget=1000), np.zeros(3))

    def test_full_support(self):
        y = np.array([1.5, -0.2, 0.7])
        p = ProxProblem(SDiffPenalty(Regularizer.l2(), 3), 0.5, y)
        np.testing.assert_array_equal(prox_oracle(p, budget=1000), y)

    def test_budget_floor(self):
        p = ProxProblem(SDiffPenalty(Regularizer.l1(), 1), 1.0, np.array([1.0, 2.0]))
        with pytest.raises(ParameterError):
            prox_oracle(p, budget=999)

    def test_scad_is_supported(self):
        p = ProxProblem(SDiffPenalty(Regularizer.scad(3.7), 1), 1.0, np.array([4.0, 0.3]))
        x = prox_oracle(p, budget=1000)
        assert prox_objective(p, x) <= prox_objective(p, np.array([4.0, 0.0])) + 1e-12

    def test_closed_forms_dominate_quick(self, rng):
        for _ in range(10):
            for reg in _closed_form_regs(rng):
                p = _random_problem(rng, reg)
                closed = prox_sdiff(p)
                oracle = prox_oracle(p, budget=1000, seed=int(rng.integers(0, 2**31)))
                e_oracle = prox_objective(p, oracle)
                assert prox_objective(p, closed) <= e_oracle + 1e-6 * max(1.0, e_oracle)


@pytest.mark.slow
@pytest.mark.parametrize(
    "make_reg",
    [
        lambda rng: Regularizer.l1(),
        lambda rng: Regularizer.l2_squared(),
        lambda rng: Regularizer.l2(),
        lambda rng: Regularizer.l1_minus_al2(float(rng.uniform(0.0, 1.0))),
        lambda rng: Regularizer.lsp(float(rng.uniform(0.2, 3.0))),
        lambda rng: Regularizer.mcp(float(rng.uniform(0.2, 3.0))),
    ],
    ids=["l1", "l2sq", "l2", "l1-al2", "lsp", "mcp"],
)
def test_closed_form_dominates_oracle(make_reg, rng):
    for trial in range(200):
        p = _random_problem(rng, make_reg(rng))
        closed = prox_sdiff(p)
        oracle = prox_oracle(p, budget=1000, seed=trial)
        e_oracle = prox_objective(p, oracle)
        assert prox_objective(p, closed) <= e_oracle + 1e-6 * max(1.0, e_oracle)
