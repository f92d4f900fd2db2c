"""Robust counterparts and both solvers on small analytic design problems."""

import numpy as np
import pytest

from pmopt import opt
from pmopt.errors import InfeasibleParameter


class Quadratic:
    """0.5 * ||p - c||^2 with analytic derivatives."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def value(self, p):
        return 0.5 * float(np.sum((np.asarray(p) - self.c) ** 2))

    def grad(self, p):
        return np.asarray(p, dtype=float) - self.c

    def hess(self, p):
        return np.eye(self.c.size)


class ExpRow:
    """h(p) = exp(a @ p) - b: smooth, nonlinear, curvature everywhere."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = float(b)

    def value(self, p):
        return float(np.exp(self.a @ np.asarray(p)) - self.b)

    def grad(self, p):
        return np.exp(self.a @ np.asarray(p)) * self.a

    def hess(self, p):
        return np.exp(self.a @ np.asarray(p)) * np.outer(self.a, self.a)


def _toy_problem():
    """Two-variable problem with one linear and one curved row."""
    return opt.DesignProblem(
        objective=Quadratic([2.0, 1.0]),
        rows=[
            opt.LinearRow([1.0, 1.0], -2.5),      # p1 + p2 <= 2.5
            ExpRow([0.5, -0.25], 3.0),            # exp(...) <= 3
        ],
        lower=np.array([-4.0, -4.0]),
        upper=np.array([4.0, 4.0]),
        std_signs=np.array([1.0, 1.0]),
    )


def _fd_check(fun, x, analytic, h=1e-6, tol=5e-7):
    """Central-difference check of a stacked gradient/Jacobian."""
    x = np.asarray(x, dtype=float)
    fd = np.zeros_like(np.atleast_2d(analytic), dtype=float)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        up = np.atleast_1d(np.asarray(fun(x + e), dtype=float))
        dn = np.atleast_1d(np.asarray(fun(x - e), dtype=float))
        fd[:, i] = (up - dn) / (2.0 * h)
    scale = max(1.0, np.abs(fd).max())
    assert np.abs(np.atleast_2d(analytic) - fd).max() <= tol * scale


class TestBuildingBlocks:
    def test_linear_row(self):
        row = opt.LinearRow([2.0, -1.0], 3.0)
        assert row.value([1.0, 1.0]) == 4.0
        assert np.allclose(row.grad([0.0, 0.0]), [2.0, -1.0])
        assert np.all(row.hess([0.0, 0.0]) == 0.0)

    def test_product_objective(self):
        obj = opt.ProductObjective(0, 1, dim=3)
        p = np.array([3.0, 4.0, 9.0])
        assert obj.value(p) == 12.0
        assert np.allclose(obj.grad(p), [4.0, 3.0, 0.0])
        assert obj.hess(p)[0, 1] == 1.0 and obj.hess(p)[2, 2] == 0.0

    def test_matched_weight_is_sqrt_three(self):
        assert opt.MATCHED_STD_WEIGHT == pytest.approx(np.sqrt(3.0), rel=1e-15)

    def test_std_signs_validated(self):
        with pytest.raises(ValueError):
            opt.DesignProblem(
                objective=Quadratic([0.0]), rows=[opt.LinearRow([1.0], 0.0)],
                lower=[0.0], upper=[1.0], std_signs=[0.5],
            )


class TestFormulationInterface:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            opt.Formulation(_toy_problem(), "minimax", 0.1)

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            opt.Formulation(_toy_problem(), "wc2", -0.1)

    def test_oversized_scatter_empties_design_box(self):
        with pytest.raises(InfeasibleParameter):
            opt.Formulation(_toy_problem(), "wc2", 5.0)

    def test_robust_kinds_tighten_bounds(self):
        f = opt.Formulation(_toy_problem(), "wc2", 0.25)
        assert np.allclose(f.lower, [-3.75, -3.75])
        assert np.allclose(f.upper, [3.75, 3.75])
        nom = opt.Formulation(_toy_problem(), "nominal", 0.25)
        assert np.allclose(nom.lower, [-4.0, -4.0])

    def test_wc1_adds_one_slack_block_per_row_plus_objective(self):
        f = opt.Formulation(_toy_problem(), "wc1", 0.1)
        assert f.n_vars == 2 + 2 * (2 + 1)
        x0 = f.pack([0.5, 0.5])
        assert x0.shape == (f.n_vars,)
        _, grads = f._eval(np.array([0.5, 0.5]))
        assert np.allclose(x0[2:], np.abs(0.1 * grads).ravel())

    @pytest.mark.parametrize("kind", opt.FORMULATIONS)
    def test_objective_gradient_matches_fd(self, kind):
        f = opt.Formulation(_toy_problem(), kind, [0.15, 0.1], uq_nodes=4)
        x = f.pack([0.4, -0.3])
        _, g = f.objective(x)
        _fd_check(lambda z: f.objective(z)[0], x, g)

    @pytest.mark.parametrize("kind", opt.FORMULATIONS)
    def test_constraint_jacobian_matches_fd(self, kind):
        f = opt.Formulation(_toy_problem(), kind, [0.15, 0.1], uq_nodes=4)
        x = f.pack([0.4, -0.3])
        _, jac = f.constraints(x)
        _fd_check(lambda z: f.constraints(z)[0], x, jac)

    def test_mc_moment_gradients_match_fd(self):
        f = opt.Formulation(_toy_problem(), "uq_robust", 0.1,
                            uq_method="mc", mc_samples=400, mc_seed=3)
        x = np.array([0.4, -0.3])
        _, g = f.objective(x)
        _fd_check(lambda z: f.objective(z)[0], x, g)

    def test_zero_scatter_collapses_to_nominal(self):
        p = np.array([0.7, -0.2])
        nom = opt.Formulation(_toy_problem(), "nominal", 0.0)
        for kind in ("wc1", "wc2", "uq_nominal", "uq_robust", "uq_lin"):
            f = opt.Formulation(_toy_problem(), kind, 0.0)
            assert f.value(p) == pytest.approx(nom.value(p), rel=1e-12)
            assert np.allclose(f.violations(p), nom.violations(p), rtol=1e-12)

    def test_wc2_equals_linearized_mean_std_at_matched_weight(self):
        """Two independent code paths produce the same counterpart."""
        delta = [0.2, 0.15]
        a = opt.Formulation(_toy_problem(), "wc2", delta)
        b = opt.Formulation(_toy_problem(), "uq_lin", delta,
                            lam=opt.MATCHED_STD_WEIGHT)
        for p in ([0.4, -0.3], [1.0, 1.0], [-2.0, 0.5]):
            assert a.value(p) == pytest.approx(b.value(p), rel=1e-12)
            assert np.allclose(a.violations(p), b.violations(p), rtol=1e-12)
            fa, ga = a.objective(np.asarray(p, dtype=float))
            fb, gb = b.objective(np.asarray(p, dtype=float))
            assert fa == pytest.approx(fb, rel=1e-12)
            assert np.allclose(ga, gb, rtol=1e-9, atol=1e-12)

    def test_evaluation_cache_counts_unique_points(self):
        f = opt.Formulation(_toy_problem(), "nominal", 0.0)
        p = np.array([0.3, 0.3])
        f.objective(p)
        f.constraints(p)
        f.objective(p.copy())
        assert f.n_evaluations == 1


class TestSqp:
    def test_unconstrained_quadratic(self):
        prob = opt.DesignProblem(
            objective=Quadratic([1.5, -0.5]), rows=[], lower=[-4, -4],
            upper=[4, 4], std_signs=[],
        )
        res = opt.solve_sqp(opt.Formulation(prob, "nominal", 0.0), [0.0, 0.0])
        assert res.converged
        assert np.allclose(res.p, [1.5, -0.5], atol=1e-7)

    def test_active_linear_constraint(self):
        # min 0.5||p||^2 s.t. p1 + p2 >= 1 -> (0.5, 0.5)
        prob = opt.DesignProblem(
            objective=Quadratic([0.0, 0.0]),
            rows=[opt.LinearRow([-1.0, -1.0], 1.0)],
            lower=[-4, -4], upper=[4, 4], std_signs=[1],
        )
        res = opt.solve_sqp(opt.Formulation(prob, "nominal", 0.0), [2.0, 0.0])
        assert res.converged
        assert np.allclose(res.p, [0.5, 0.5], atol=1e-7)
        assert res.multipliers[0] > 0.0  # active row

    def test_bound_active_solution(self):
        prob = opt.DesignProblem(
            objective=Quadratic([3.0, 0.0]), rows=[], lower=[-1, -1],
            upper=[1, 1], std_signs=[],
        )
        res = opt.solve_sqp(opt.Formulation(prob, "nominal", 0.0), [0.0, 0.0])
        assert res.converged
        assert res.p[0] == pytest.approx(1.0, abs=1e-8)

    def test_contradictory_rows_fail_gracefully(self):
        prob = opt.DesignProblem(
            objective=Quadratic([0.0, 0.0]),
            rows=[opt.LinearRow([1.0, 0.0], 1.0),     # p1 <= -1
                  opt.LinearRow([-1.0, 0.0], 0.5)],   # p1 >= 0.5
            lower=[-4, -4], upper=[4, 4], std_signs=[1, 1],
        )
        res = opt.solve_sqp(opt.Formulation(prob, "nominal", 0.0),
                            [0.0, 0.0], max_iter=20)
        assert not res.converged
        assert np.clip(res.constraints, 0.0, None).max() > 0.1

    def test_trace_rows_documented_keys(self):
        prob = _toy_problem()
        res = opt.solve_sqp(opt.Formulation(prob, "nominal", 0.0), [0.0, 0.0])
        assert res.trace
        assert set(res.trace[0]) == {"iter", "objective", "violation", "step", "kkt"}

    def test_wc1_slacks_tight_at_solution(self):
        f = opt.Formulation(_toy_problem(), "wc1", 0.2)
        res = opt.solve_sqp(f, f.pack([0.0, 0.0]))
        assert res.converged
        p = res.p
        _, grads = f._eval(p)
        envelope = np.abs(0.2 * grads)
        xi = res.x[2:].reshape(3, 2)
        # every slack dominates its envelope; the objective block is driven
        # onto it because the slacks enter the objective directly
        assert np.all(xi >= envelope - 1e-7)
        assert np.allclose(xi[0], envelope[0], atol=1e-6)
        assert res.f == pytest.approx(f.value(p), abs=1e-7)

    def test_wc2_and_linearized_counterparts_share_optimum(self):
        fa = opt.Formulation(_toy_problem(), "wc2", 0.2)
        fb = opt.Formulation(_toy_problem(), "uq_lin", 0.2,
                             lam=opt.MATCHED_STD_WEIGHT)
        ra = opt.solve_sqp(fa, [0.0, 0.0], tol=1e-7)
        rb_ = opt.solve_sqp(fb, [0.0, 0.0], tol=1e-7)
        assert ra.converged and rb_.converged
        assert np.linalg.norm(ra.p - rb_.p, np.inf) <= 1e-6
        assert ra.f == pytest.approx(rb_.f, rel=1e-8)

    def test_robust_optimum_costs_more_than_nominal(self):
        nom = opt.solve_sqp(opt.Formulation(_toy_problem(), "nominal", 0.0),
                            [0.0, 0.0])
        rob = opt.solve_sqp(opt.Formulation(_toy_problem(), "wc2", 0.3),
                            [0.0, 0.0], tol=1e-7)
        assert nom.converged and rob.converged
        nominal_obj = Quadratic([2.0, 1.0])
        assert nominal_obj.value(rob.p) >= nominal_obj.value(nom.p) - 1e-10


class TestPso:
    def test_reproducible_for_fixed_seed(self):
        f = opt.Formulation(_toy_problem(), "nominal", 0.0)
        opts = opt.PsoOptions(n_particles=20, max_iter=30)
        a = opt.solve_pso(f.value, f.violations, f.lower, f.upper, seed=11,
                          options=opts)
        b = opt.solve_pso(f.value, f.violations, f.lower, f.upper, seed=11,
                          options=opts)
        assert np.array_equal(a.p, b.p)
        assert a.trace == b.trace

    def test_finds_constrained_minimum(self):
        prob = opt.DesignProblem(
            objective=Quadratic([0.0, 0.0]),
            rows=[opt.LinearRow([-1.0, -1.0], 1.0)],
            lower=[-4, -4], upper=[4, 4], std_signs=[1],
        )
        f = opt.Formulation(prob, "nominal", 0.0)
        res = opt.solve_pso(f.value, f.violations, f.lower, f.upper, seed=0,
                            options=opt.PsoOptions(max_iter=200, spread_tol=1e-9))
        assert np.allclose(res.p, [0.5, 0.5], atol=1e-2)
        assert res.violation <= 1e-3

    def test_iteration_budget_stop(self):
        f = opt.Formulation(_toy_problem(), "nominal", 0.0)
        res = opt.solve_pso(f.value, f.violations, f.lower, f.upper, seed=1,
                            options=opt.PsoOptions(n_particles=10, max_iter=3))
        assert res.stop_reason == "max_iter"
        assert res.n_iter == 3
        assert res.n_evals == 10 * 4  # initial sweep + one per iteration

    def test_trace_rows_documented_keys(self):
        f = opt.Formulation(_toy_problem(), "nominal", 0.0)
        res = opt.solve_pso(f.value, f.violations, f.lower, f.upper, seed=2,
                            options=opt.PsoOptions(n_particles=8, max_iter=5))
        assert set(res.trace[0]) == {"iter", "objective", "violation", "step", "stall"}
