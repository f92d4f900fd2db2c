"""Parametrized 2D magnetostatic FE model with affine decomposition.

The z-component of the magnetic vector potential is discretized with nodal P1
triangles; the curl-curl equation for a z-directed potential reduces to a
scalar diffusion form with the reluctivity as coefficient,

    K(p) u(p) = j_src + j_pm(p),      K_ij = int nu grad(N_i) . grad(N_j) dA,

with homogeneous Dirichlet values on the window boundary (flux-parallel).
The permanent magnet is magnetized in +y; its load vector is
j_pm,i = H_c int_magnet dN_i/dx dA.  All parameter dependence lives in the
macro-subdomain weights of geom: stiffness blocks (xx, yy, xy, yx) and one
source weight per magnet subdomain.  Every block is assembled once, on a
shared sparsity pattern, so K(p) and its parameter derivatives are weighted
sums of precomputed data arrays.

The scalar EMF output is E0(p) = c_E * (u_a - u_b) for two fixed probe nodes
in the airgap; c_E is calibrated once so that E0(p_ref) equals a prescribed
target (default 30.37 V).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from . import geom
from .errors import DegenerateGeometry, SingularMaterial, SolveFailure
from .geom import AIR, IRON, MAGNET, MacroTriangulation, affine_weights
from .mesh import FineMesh, build_mesh

DEFAULT_EMF_TARGET = 30.37


@dataclass(frozen=True)
class MaterialTable:
    """Region reluctivities (normalized units) and magnet remanence.

    nu0 is the air reluctivity; iron gets nu0 / mu_r_iron and the magnet
    region nu_magnet (defaults to nu0, i.e. recoil permeability one).  The
    magnetization enters as a coercive field of magnitude remanence * nu.
    """

    nu0: float = 1.0
    mu_r_iron: float = 500.0
    nu_magnet: Optional[float] = None
    remanence: float = 1.0

    def __post_init__(self):
        if self.nu0 <= 0.0 or self.mu_r_iron <= 0.0:
            raise SingularMaterial(
                f"nonpositive reluctivity: nu0={self.nu0}, mu_r_iron={self.mu_r_iron}"
            )
        if self.nu_magnet is not None and self.nu_magnet <= 0.0:
            raise SingularMaterial(f"nonpositive magnet reluctivity {self.nu_magnet}")
        if self.remanence < 0.0:
            raise SingularMaterial(f"negative remanence {self.remanence}")

    def nu_of_region(self, region: int) -> float:
        if region == IRON:
            return self.nu0 / self.mu_r_iron
        if region == MAGNET:
            return self.nu_magnet if self.nu_magnet is not None else self.nu0
        if region == AIR:
            return self.nu0
        raise ValueError(f"unknown region tag {region}")

    @property
    def coercive_field(self) -> float:
        return self.remanence * self.nu_of_region(MAGNET)


@dataclass
class FieldSolution:
    """Solution of the full-order system at one parameter point."""

    u: NDArray                  # free-DoF values
    p: NDArray
    lu: object = field(repr=False, default=None)   # reusable factorization


class AffineModel:
    """Full-order FE model with precomputed affine blocks.

    Counters full_assemblies / full_solves instrument every full-dimension
    operation; reduced-order evaluations must leave them untouched.
    """

    def __init__(self, tri: MacroTriangulation, materials: MaterialTable,
                 levels: int = 4, emf_target: float = DEFAULT_EMF_TARGET,
                 coil: Optional[tuple] = None):
        self.tri = tri
        self.materials = materials
        self.levels = levels
        self.emf_target = emf_target
        self.mesh: FineMesh = build_mesh(tri, levels)
        self.full_assemblies = 0
        self.full_solves = 0
        self._build_blocks(coil)
        self._calibrate()

    # -- construction -----------------------------------------------------

    def _build_blocks(self, coil) -> None:
        mesh = self.mesh
        tri = self.tri
        pos = mesh.positions(tri.p_ref)

        free = np.full(mesh.n_nodes, -1, dtype=int)
        interior = np.flatnonzero(~mesh.dirichlet)
        free[interior] = np.arange(len(interior))
        self.free = free
        self.n_free = len(interior)

        t = mesh.triangles
        x = pos[t, 0]
        y = pos[t, 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        area = 0.5 * np.einsum("ei,ei->e", x, b)
        if np.any(area <= 0.0):
            raise DegenerateGeometry("fine mesh has a nonpositive-area triangle at p_ref")
        self._ref_area = area

        nu = np.array([self.materials.nu_of_region(r) for r in mesh.tri_region])
        s = nu / (4.0 * area)
        loc_xx = s[:, None, None] * b[:, :, None] * b[:, None, :]
        loc_yy = s[:, None, None] * c[:, :, None] * c[:, None, :]
        loc_xy = s[:, None, None] * b[:, :, None] * c[:, None, :]
        loc_yx = loc_xy.transpose(0, 2, 1)

        tt = free[t]                                   # (n_els, 3)
        rows = np.repeat(tt, 3, axis=1).ravel()        # local row index i, j fast
        cols = np.tile(tt, (1, 3)).ravel()             # local column index j
        keep = (rows >= 0) & (cols >= 0)
        rows, cols = rows[keep], cols[keep]
        shape = (self.n_free, self.n_free)

        def _to_csr(loc: NDArray, mask: NDArray) -> sp.csr_matrix:
            data = np.where(mask[:, None, None], loc, 0.0).ravel()[keep]
            m = sp.coo_matrix((data, (rows, cols)), shape=shape).tocsr()
            m.sort_indices()
            return m

        outer = mesh.tri_macro < 0
        k0 = _to_csr(loc_xx + loc_yy, outer)
        self._indptr = k0.indptr
        self._indices = k0.indices
        self._data0 = k0.data
        nnz = len(k0.data)

        n_sub = tri.n_subdomains
        self._dxx = np.empty((n_sub, nnz))
        self._dyy = np.empty((n_sub, nnz))
        self._dxy = np.empty((n_sub, nnz))
        self._dyx = np.empty((n_sub, nnz))
        for l in range(n_sub):
            mask = mesh.tri_macro == l
            for dst, loc in ((self._dxx, loc_xx), (self._dyy, loc_yy),
                             (self._dxy, loc_xy), (self._dyx, loc_yx)):
                m = _to_csr(loc, mask)
                if not np.array_equal(m.indices, self._indices):
                    raise RuntimeError("affine blocks have mismatched sparsity")
                dst[l] = m.data
        self._dxys = self._dxy + self._dyx

        # magnetization load: H_c * int_T dN_i/dx dA = H_c * b_i / 2 per element
        h_c = self.materials.coercive_field
        self.magnet_ids = tri.magnet_subdomains
        jpm = np.zeros((len(self.magnet_ids), self.n_free))
        for k, l in enumerate(self.magnet_ids):
            els = np.flatnonzero(mesh.tri_macro == l)
            contrib = h_c * 0.5 * b[els]
            f = free[t[els]]
            np.add.at(jpm[k], f[f >= 0], contrib[f >= 0])
        self.jpm = jpm

        self.j0 = np.zeros(self.n_free)
        if coil is not None:
            cx0, cx1, cy0, cy1, cur = coil
            centers = pos[t].mean(axis=1)
            inside = (
                (centers[:, 0] > cx0) & (centers[:, 0] < cx1)
                & (centers[:, 1] > cy0) & (centers[:, 1] < cy1)
            )
            if np.any(inside & (mesh.tri_macro >= 0)):
                raise ValueError("coil region must not intersect the decomposition box")
            els = np.flatnonzero(inside)
            contrib = np.repeat(cur * area[els][:, None] / 3.0, 3, axis=1)
            f = free[t[els]]
            np.add.at(self.j0, f[f >= 0], contrib[f >= 0])

        qa, qb = mesh.probe_nodes
        if free[qa] < 0 or free[qb] < 0:
            raise RuntimeError("probe nodes are constrained")
        q = np.zeros(self.n_free)
        q[free[qa]] = 1.0
        q[free[qb]] = -1.0
        self.q_raw = q

    def _calibrate(self) -> None:
        self.c_emf = 1.0
        self.q_emf = self.q_raw.copy()
        sol = self.solve(self.tri.p_ref)
        raw = float(self.q_raw @ sol.u)
        if raw != 0.0:
            self.c_emf = self.emf_target / raw
        self.q_emf = self.c_emf * self.q_raw

    # -- affine operators ---------------------------------------------------

    def stiffness_block(self, kind: str, l: Optional[int] = None) -> sp.csr_matrix:
        """Reference block as CSR: kind '0', 'xx', 'yy', 'xy' or 'yx'."""
        if kind == "0":
            d = self._data0
        else:
            d = {"xx": self._dxx, "yy": self._dyy,
                 "xy": self._dxy, "yx": self._dyx}[kind][l]
        return sp.csr_matrix((d.copy(), self._indices, self._indptr),
                             shape=(self.n_free, self.n_free))

    def assemble_system(self, p) -> tuple[sp.csr_matrix, NDArray]:
        """K(p) and right-hand side from the precomputed affine blocks."""
        w = affine_weights(self.tri, p)
        data = (
            self._data0
            + w.theta[:, geom.W_XX] @ self._dxx
            + w.theta[:, geom.W_YY] @ self._dyy
            + w.theta[:, geom.W_XY] @ self._dxys
        )
        k = sp.csr_matrix((data, self._indices, self._indptr),
                          shape=(self.n_free, self.n_free))
        rhs = self.j0 + w.theta_src[self.magnet_ids] @ self.jpm
        self.full_assemblies += 1
        return k, rhs

    def stiffness_derivative(self, wd: geom.WeightDerivatives, i: int) -> sp.csr_matrix:
        data = (
            wd.first[:, geom.W_XX, i] @ self._dxx
            + wd.first[:, geom.W_YY, i] @ self._dyy
            + wd.first[:, geom.W_XY, i] @ self._dxys
        )
        return sp.csr_matrix((data, self._indices, self._indptr),
                             shape=(self.n_free, self.n_free))

    def stiffness_second_derivative(self, wd, i: int, j: int) -> sp.csr_matrix:
        data = (
            wd.second[:, geom.W_XX, i, j] @ self._dxx
            + wd.second[:, geom.W_YY, i, j] @ self._dyy
            + wd.second[:, geom.W_XY, i, j] @ self._dxys
        )
        return sp.csr_matrix((data, self._indices, self._indptr),
                             shape=(self.n_free, self.n_free))

    def load_derivative(self, wd: geom.WeightDerivatives, i: int) -> NDArray:
        return wd.first[self.magnet_ids, geom.W_SRC, i] @ self.jpm

    def load_second_derivative(self, wd, i: int, j: int) -> NDArray:
        return wd.second[self.magnet_ids, geom.W_SRC, i, j] @ self.jpm

    # -- solves -------------------------------------------------------------

    def factorize(self, k: sp.csr_matrix):
        try:
            return spla.splu(k.tocsc())
        except RuntimeError as exc:
            raise SolveFailure(f"sparse factorization failed: {exc}") from exc

    def solve(self, p) -> FieldSolution:
        k, rhs = self.assemble_system(p)
        lu = self.factorize(k)
        u = lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise SolveFailure(f"non-finite solution at p={p}")
        self.full_solves += 1
        return FieldSolution(u=u, p=np.asarray(p, dtype=float).reshape(3), lu=lu)

    def emf(self, sol: FieldSolution) -> float:
        return float(self.q_emf @ sol.u)

    def lift(self, u_free: NDArray) -> NDArray:
        """Scatter free DoFs to all nodes; Dirichlet nodes are exactly zero."""
        full = np.zeros(self.mesh.n_nodes)
        full[self.free >= 0] = u_free
        return full

    # -- oracles ------------------------------------------------------------

    def assemble_brute(self, p) -> tuple[sp.csr_matrix, NDArray]:
        """One-shot reassembly on the deformed mesh (reference oracle).

        Moves every node to its position at p and assembles stiffness and
        magnetization load directly, without the affine decomposition.
        """
        mesh = self.mesh
        pos = mesh.positions(p)
        t = mesh.triangles
        x = pos[t, 0]
        y = pos[t, 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        area = 0.5 * np.einsum("ei,ei->e", x, b)
        if np.any(area <= 0.0):
            raise DegenerateGeometry(f"deformed mesh degenerates at p={p}")
        nu = np.array([self.materials.nu_of_region(r) for r in mesh.tri_region])
        s = nu / (4.0 * area)
        loc = s[:, None, None] * (
            b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]
        )
        free = self.free
        tt = free[t]
        rows = np.repeat(tt, 3, axis=1).ravel()
        cols = np.tile(tt, (1, 3)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        k = sp.coo_matrix(
            (loc.ravel()[keep], (rows[keep], cols[keep])),
            shape=(self.n_free, self.n_free),
        ).tocsr()
        k.sort_indices()

        rhs = self.j0.copy()
        h_c = self.materials.coercive_field
        mag = np.isin(mesh.tri_macro, self.magnet_ids)
        els = np.flatnonzero(mag)
        contrib = h_c * 0.5 * b[els]
        f = free[t[els]]
        np.add.at(rhs, f[f >= 0], contrib[f >= 0])
        self.full_assemblies += 1
        return k, rhs

    def signature(self) -> tuple:
        """Fingerprint used to pair serialized reduced models with a model."""
        m = self.materials
        return (
            self.levels, self.n_free, self.mesh.n_triangles,
            tuple(np.asarray(self.tri.spec.p_ref)),
            tuple(np.asarray(self.tri.spec.p_lower)),
            tuple(np.asarray(self.tri.spec.p_upper)),
            m.nu0, m.mu_r_iron, m.nu_magnet, m.remanence,
            self.emf_target, round(self.c_emf, 12),
        )


def assemble_reference(tri: MacroTriangulation, materials: MaterialTable,
                       levels: int = 4, emf_target: float = DEFAULT_EMF_TARGET,
                       coil: Optional[tuple] = None) -> AffineModel:
    """Build the reference mesh, affine blocks and calibrated EMF output."""
    return AffineModel(tri, materials, levels=levels, emf_target=emf_target, coil=coil)


def solve(model: AffineModel, p) -> FieldSolution:
    """Solve the full-order system at p (factorization kept for reuse)."""
    return model.solve(p)


def qoi_emf(model: AffineModel, sol: FieldSolution) -> float:
    """EMF output E0 = q_E^T u at a solution."""
    return model.emf(sol)


def dump_field(model: AffineModel, sol: FieldSolution) -> str:
    """CSV dump of the nodal potential (debug output)."""
    full = model.lift(sol.u)
    pos = model.mesh.positions(sol.p)
    lines = ["node,x,y,az"]
    lines += [
        f"{i},{pos[i, 0]!r},{pos[i, 1]!r},{full[i]!r}" for i in range(len(full))
    ]
    return "\n".join(lines) + "\n"
