"""EMF gradient and Hessian from sensitivity solves, checked against FD."""

import numpy as np
import pytest

from pmopt import fem, sens


def _fd_grad_emf(model, p, h=1e-5):
    g = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        up = model.solve(p + e)
        dn = model.solve(p - e)
        g[i] = (model.emf(up) - model.emf(dn)) / (2.0 * h)
    return g


class TestFirstOrder:
    def test_gradient_matches_central_differences(self, model_small):
        rng = np.random.Generator(np.random.Philox(21))
        lo = np.asarray(model_small.tri.spec.p_lower) + 0.5
        hi = np.asarray(model_small.tri.spec.p_upper) - 0.5
        for p in lo + rng.random((3, 3)) * (hi - lo):
            b = sens.first_order(model_small, p)
            fd = _fd_grad_emf(model_small, p)
            assert np.linalg.norm(b.grad_emf - fd) <= 1e-6 * np.linalg.norm(fd)

    def test_field_sensitivity_matches_field_differences(self, model_small):
        p = np.array([10.0, 4.0, 8.0])
        b = sens.first_order(model_small, p)
        h = 1e-5
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (model_small.solve(p + e).u - model_small.solve(p - e).u) / (2 * h)
            scale = max(np.abs(fd).max(), 1.0)
            assert np.abs(b.s[i] - fd).max() <= 1e-6 * scale

    def test_accepts_precomputed_solution(self, model_small):
        p = np.array([12.0, 6.0, 9.0])
        sol = model_small.solve(p)
        n0 = model_small.full_solves
        b = sens.first_order(model_small, p, sol=sol)
        assert model_small.full_solves == n0  # factorization reused, no new solve
        assert b.grad_emf.shape == (3,)


class TestSecondOrder:
    def test_hessian_matches_fd_of_analytic_gradient(self, model_small):
        p = np.array([14.0, 5.0, 10.0])
        b = sens.second_order(model_small, p)
        h = 1e-4
        fd = np.zeros((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            gp = sens.first_order(model_small, p + e).grad_emf
            gm = sens.first_order(model_small, p - e).grad_emf
            fd[:, j] = (gp - gm) / (2.0 * h)
        assert np.linalg.norm(b.hess_emf - fd) <= 1e-6 * np.linalg.norm(fd)

    def test_hessian_symmetric(self, model_small):
        b = sens.second_order(model_small, [8.0, 3.0, 7.0])
        assert np.allclose(b.hess_emf, b.hess_emf.T, atol=1e-12)
        assert np.allclose(b.s2, np.swapaxes(b.s2, 0, 1), atol=1e-14)

    def test_extends_existing_bundle_in_place(self, model_small):
        p = np.array([16.0, 7.0, 11.0])
        sol = model_small.solve(p)
        b1 = sens.first_order(model_small, p, sol=sol)
        b2 = sens.second_order(model_small, p, sol=sol, bundle=b1)
        assert b2 is b1
        assert b1.hess_emf is not None

    def test_consistent_with_one_shot_call(self, model_small):
        p = np.array([16.0, 7.0, 11.0])
        direct = sens.second_order(model_small, p)
        sol = model_small.solve(p)
        staged = sens.second_order(
            model_small, p, sol=sol, bundle=sens.first_order(model_small, p, sol=sol)
        )
        assert np.allclose(direct.hess_emf, staged.hess_emf, rtol=1e-12)
