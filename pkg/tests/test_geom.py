"""Geometry map: affine vertex motion, weight tensors, analytic derivatives."""

import numpy as np
import pytest

from pmopt import geom
from pmopt.errors import DegenerateGeometry


def _random_points(tri, n, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    lo = np.asarray(tri.spec.p_lower)
    hi = np.asarray(tri.spec.p_upper)
    return lo + rng.random((n, 3)) * (hi - lo)


class TestTriangulation:
    def test_reference_configuration(self, tri):
        areas = tri.triangle_areas(tri.p_ref)
        assert np.all(areas > 0.0)
        spec = tri.spec
        box_area = spec.box_width * spec.box_height
        assert np.isclose(areas.sum(), box_area, rtol=1e-12)

    def test_tiling_is_parameter_independent(self, tri):
        spec = tri.spec
        box_area = spec.box_width * spec.box_height
        for p in _random_points(tri, 10, seed=1):
            areas = tri.triangle_areas(p)
            assert np.all(areas > 0.0)
            assert np.isclose(areas.sum(), box_area, rtol=1e-12)

    def test_vertex_positions_affine(self, tri):
        p = np.array([3.0, 2.0, 6.0])
        q = np.array([20.0, 9.0, 13.0])
        mid = tri.vertex_positions(0.5 * (p + q))
        avg = 0.5 * (tri.vertex_positions(p) + tri.vertex_positions(q))
        assert np.allclose(mid, avg, atol=1e-12)

    def test_magnet_subdomains_tagged(self, tri):
        ids = tri.magnet_subdomains
        assert len(ids) == 4
        assert np.all(tri.tags[ids] == geom.MAGNET)

    def test_dump_lists_every_entity(self, tri):
        text = tri.dump()
        assert len([l for l in text.splitlines() if l.startswith("v ")]) == \
            len(tri.v_const)
        assert len([l for l in text.splitlines() if l.startswith("t ")]) == \
            tri.n_subdomains


class TestAffineWeights:
    def test_identity_at_reference(self, tri):
        w = geom.affine_weights(tri, tri.p_ref)
        assert np.allclose(w.theta[:, geom.W_XX], 1.0, atol=1e-14)
        assert np.allclose(w.theta[:, geom.W_YY], 1.0, atol=1e-14)
        assert np.allclose(w.theta[:, geom.W_XY], 0.0, atol=1e-14)
        assert np.allclose(w.theta[:, geom.W_YX], 0.0, atol=1e-14)
        assert np.allclose(w.theta_src, 1.0, atol=1e-14)

    def test_degenerate_parameters_rejected(self, tri):
        with pytest.raises(DegenerateGeometry):
            geom.affine_weights(tri, (5.0, 20.0, 20.0))

    def test_weights_match_direct_geometry(self, tri):
        """Weights must reproduce the gradient-map identity
        theta = det(B) * B^-1 B^-T per subdomain."""
        for p in _random_points(tri, 5, seed=7):
            w = geom.affine_weights(tri, p)
            verts_ref = tri.vertex_positions(tri.p_ref)
            verts = tri.vertex_positions(p)
            for l, tri_ids in enumerate(tri.triangles):
                a0, b0, c0 = verts_ref[tri_ids]
                a1, b1, c1 = verts[tri_ids]
                b_map = np.column_stack([b1 - a1, c1 - a1]) @ np.linalg.inv(
                    np.column_stack([b0 - a0, c0 - a0]))
                m = np.linalg.det(b_map) * np.linalg.inv(b_map) @ \
                    np.linalg.inv(b_map).T
                assert np.isclose(w.theta[l, geom.W_XX], m[0, 0], atol=1e-10)
                assert np.isclose(w.theta[l, geom.W_YY], m[1, 1], atol=1e-10)
                assert np.isclose(w.theta[l, geom.W_XY], m[0, 1], atol=1e-10)
                assert np.isclose(w.theta[l, geom.W_YX], m[1, 0], atol=1e-10)


class TestWeightDerivatives:
    @pytest.mark.parametrize("seed", [11, 12, 13])
    def test_first_derivatives_match_finite_differences(self, tri, seed):
        p = _random_points(tri, 1, seed=seed)[0]
        wd = geom.weight_derivatives(tri, p)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            wp = geom.affine_weights(tri, p + e)
            wm = geom.affine_weights(tri, p - e)
            fd_theta = (wp.theta - wm.theta) / (2 * h)
            fd_src = (wp.theta_src - wm.theta_src) / (2 * h)
            assert np.allclose(wd.first[:, :4, i], fd_theta, atol=5e-8)
            assert np.allclose(wd.first[:, geom.W_SRC, i], fd_src, atol=5e-8)

    def test_second_derivatives_match_finite_differences(self, tri):
        p = np.array([12.0, 4.0, 9.0])
        wd = geom.weight_derivatives(tri, p)
        h = 1e-4
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            wp = geom.weight_derivatives(tri, p + e)
            wm = geom.weight_derivatives(tri, p - e)
            fd = (wp.first - wm.first) / (2 * h)
            assert np.allclose(wd.second[:, :, :, i], fd, atol=5e-6)

    def test_second_derivatives_symmetric(self, tri):
        for p in _random_points(tri, 3, seed=21):
            wd = geom.weight_derivatives(tri, p)
            assert np.allclose(wd.second, np.swapaxes(wd.second, 2, 3),
                               atol=1e-12)
