"""Full-order model: affine assembly, calibration, solves, counters."""

import numpy as np
import pytest
import scipy.sparse as sp

from pmopt import fem, geom
from pmopt.errors import SingularMaterial


def _rel_fro(a: sp.csr_matrix, b: sp.csr_matrix) -> float:
    return sp.linalg.norm(a - b) / sp.linalg.norm(b)


class TestMaterials:
    def test_region_reluctivities(self):
        mat = fem.MaterialTable()
        assert mat.nu_of_region(geom.AIR) == 1.0
        assert mat.nu_of_region(geom.MAGNET) == 1.0
        assert mat.nu_of_region(geom.IRON) == pytest.approx(1.0 / 500.0)
        assert mat.coercive_field == 1.0

    def test_invalid_tables_rejected(self):
        with pytest.raises(SingularMaterial):
            fem.MaterialTable(nu0=0.0)
        with pytest.raises(SingularMaterial):
            fem.MaterialTable(mu_r_iron=-2.0)
        with pytest.raises(SingularMaterial):
            fem.MaterialTable(remanence=-1.0)


class TestAffineAssembly:
    def test_matches_brute_reassembly(self, model_small):
        rng = np.random.Generator(np.random.Philox(11))
        lo = np.asarray(model_small.tri.spec.p_lower)
        hi = np.asarray(model_small.tri.spec.p_upper)
        for p in lo + rng.random((3, 3)) * (hi - lo):
            k_aff, f_aff = model_small.assemble_system(p)
            k_ref, f_ref = model_small.assemble_brute(p)
            assert _rel_fro(k_aff, k_ref) <= 1e-10
            assert np.linalg.norm(f_aff - f_ref) <= 1e-10 * np.linalg.norm(f_ref)

    def test_stiffness_is_symmetric_positive_definite(self, model_small):
        k, _ = model_small.assemble_system([4.0, 9.0, 13.0])
        assert abs(k - k.T).max() <= 1e-12
        u = np.random.default_rng(0).standard_normal(model_small.n_free)
        assert u @ (k @ u) > 0.0


class TestSolve:
    def test_emf_calibrated_at_reference(self, model_small):
        sol = model_small.solve(model_small.tri.p_ref)
        assert model_small.emf(sol) == pytest.approx(model_small.emf_target, rel=1e-14)

    def test_dirichlet_nodes_exactly_zero(self, model_small):
        sol = model_small.solve([3.0, 2.0, 6.0])
        full = model_small.lift(sol.u)
        assert np.all(full[model_small.mesh.dirichlet] == 0.0)
        assert np.any(full != 0.0)

    def test_zero_remanence_gives_zero_field(self, tri):
        silent = fem.assemble_reference(
            tri, fem.MaterialTable(remanence=0.0), levels=2, emf_target=0.0
        )
        sol = silent.solve([10.0, 4.0, 8.0])
        assert np.all(sol.u == 0.0)

    def test_solution_linear_in_remanence(self, tri):
        p = np.array([10.0, 4.0, 8.0])
        m1 = fem.assemble_reference(tri, fem.MaterialTable(remanence=1.0), levels=2)
        m3 = fem.assemble_reference(tri, fem.MaterialTable(remanence=3.0), levels=2)
        u1 = m1.solve(p).u
        u3 = m3.solve(p).u
        assert np.allclose(u3, 3.0 * u1, rtol=1e-12, atol=1e-12 * np.abs(u3).max())

    def test_probe_output_converges_under_refinement(self, tri, model_small, model):
        # raw (uncalibrated) probe differences shrink on successive refinements
        p = np.array([10.0, 4.0, 8.0])
        m2 = fem.assemble_reference(tri, fem.MaterialTable(), levels=2)
        raw = [float(m.q_raw @ m.solve(p).u) for m in (m2, model_small, model)]
        diffs = np.abs(np.diff(raw)) / abs(raw[-1])
        assert diffs[1] < diffs[0]
        assert diffs[-1] < 0.05


class TestCounters:
    def test_solve_increments_both_counters(self, tri):
        m = fem.assemble_reference(tri, fem.MaterialTable(), levels=1)
        a0, s0 = m.full_assemblies, m.full_solves
        m.solve(m.tri.p_ref)
        assert (m.full_assemblies, m.full_solves) == (a0 + 1, s0 + 1)
        m.assemble_system(m.tri.p_ref)
        assert (m.full_assemblies, m.full_solves) == (a0 + 2, s0 + 1)


class TestSignatureAndDumps:
    def test_signature_distinguishes_configurations(self, tri, model_small):
        other = fem.assemble_reference(tri, fem.MaterialTable(mu_r_iron=100.0), levels=3)
        assert other.signature() != model_small.signature()
        again = fem.assemble_reference(tri, fem.MaterialTable(), levels=3)
        assert again.signature() == model_small.signature()

    def test_field_dump_covers_every_node(self, model_small):
        sol = model_small.solve(model_small.tri.p_ref)
        text = fem.dump_field(model_small, sol)
        lines = text.strip().split("\n")
        assert lines[0] == "node,x,y,az"
        assert len(lines) == 1 + model_small.mesh.n_nodes
