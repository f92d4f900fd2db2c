"""Certified reduced-basis surrogates for the affine magnetostatic model.

A reduced model is a Galerkin projection of the full-order system onto a
low-dimensional snapshot space, valid on one axis-aligned sub-box of the
parameter space.  Training is greedy: a residual-based error bound is swept
over a tensor training grid and the full-order model is solved only at the
point where the bound is largest.

The bound is Delta_u(p) = ||r(p)||_* / alpha(p).  The residual dual norm is
taken with respect to the energy norm of the sub-box midpoint operator; the
Riesz representers of every affine residual term are precomputed, so the
online bound costs O((Q d)^2) operations, independent of the fine-mesh
dimension.  alpha(p) is a subdomain-wise eigenvalue lower bound for the
coercivity of K(p) relative to K(p_mid): each subdomain contributes the
smallest eigenvalue of C_mid^-1 C(p), where C is the 2x2 gradient-weight
tensor of the subdomain, and the undeformed exterior contributes exactly 1.

A Dictionary partitions the global parameter box into sub-boxes with one
reduced model each; lookup selects the sub-box containing a point, with
ties at interior breakpoints going to the lower box.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numpy.typing import NDArray

from . import geom
from .errors import (ConfigError, InfeasibleParameter, NonpositiveCoercivity,
                     SolveFailure, TrainingFailure)
from .fem import DEFAULT_EMF_TARGET, AffineModel
from .geom import W_SRC, W_XX, W_XY, W_YY
from .sens import SensitivityBundle

#: Sub-box edges of the default dictionary (10 x 2 x 2 = 40 sub-boxes).
DEFAULT_BREAKPOINTS = (
    (0.5, 3.0, 6.0, 8.0, 11.0, 13.0, 16.0, 18.0, 21.0, 23.0, 26.5),
    (0.5, 7.5, 10.5),
    (4.5, 7.5, 14.5),
)


@dataclass(frozen=True)
class TrainingOptions:
    """Greedy-training knobs.

    grid_shape sizes the tensor training grid per sub-box; tol is the
    relative energy-norm target (scaled by the first snapshot's norm);
    max_basis caps the basis dimension; snapshots whose orthogonalized
    remainder falls below dependent_tol * scale are discarded as linearly
    dependent.
    """

    grid_shape: tuple = (6, 4, 4)
    tol: float = 1e-4
    max_basis: int = 150
    dependent_tol: float = 1e-10


# -- affine weight vectors ----------------------------------------------------
#
# Residual terms are ordered load-first: [j0, jpm_0..jpm_3], then one group
# of operator terms per basis vector: [K0, (xx, yy, xy+yx) per subdomain].

def _theta_f(w: geom.AffineWeights, magnet_ids: NDArray) -> NDArray:
    return np.concatenate(([1.0], w.theta_src[magnet_ids]))


def _theta_f_first(wd: geom.WeightDerivatives, magnet_ids: NDArray, i: int) -> NDArray:
    return np.concatenate(([0.0], wd.first[magnet_ids, W_SRC, i]))


def _theta_f_second(wd, magnet_ids: NDArray, i: int, j: int) -> NDArray:
    return np.concatenate(([0.0], wd.second[magnet_ids, W_SRC, i, j]))


def _theta_k(w: geom.AffineWeights) -> NDArray:
    per_sub = np.stack(
        [w.theta[:, W_XX], w.theta[:, W_YY], w.theta[:, W_XY]], axis=1
    )
    return np.concatenate(([1.0], per_sub.ravel()))


def _theta_k_first(wd: geom.WeightDerivatives, i: int) -> NDArray:
    per_sub = np.stack(
        [wd.first[:, W_XX, i], wd.first[:, W_YY, i], wd.first[:, W_XY, i]], axis=1
    )
    return np.concatenate(([0.0], per_sub.ravel()))


def _theta_k_second(wd, i: int, j: int) -> NDArray:
    per_sub = np.stack(
        [wd.second[:, W_XX, i, j], wd.second[:, W_YY, i, j],
         wd.second[:, W_XY, i, j]], axis=1
    )
    return np.concatenate(([0.0], per_sub.ravel()))


def _gradient_tensors(theta: NDArray) -> NDArray:
    """Per-subdomain 2x2 gradient-weight tensors from a weight table."""
    c = np.empty((theta.shape[0], 2, 2))
    c[:, 0, 0] = theta[:, W_XX]
    c[:, 1, 1] = theta[:, W_YY]
    c[:, 0, 1] = c[:, 1, 0] = theta[:, W_XY]
    return c


def _coercivity(c_mid_inv: NDArray, c_mid: NDArray, c: NDArray) -> float:
    """min(1, min_l lambda_min(C_mid,l^-1 C_l)); raises if nonpositive."""
    if np.array_equal(c, c_mid):
        return 1.0
    a = c_mid_inv @ c
    tr = a[:, 0, 0] + a[:, 1, 1]
    det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    if np.any(tr <= 0.0) or np.any(det <= 0.0):
        raise NonpositiveCoercivity("gradient-weight tensor lost positivity")
    disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
    alpha = float(min(1.0, np.min(0.5 * tr - disc)))
    if alpha <= 0.0:
        raise NonpositiveCoercivity(f"coercivity lower bound {alpha} <= 0")
    return alpha


def residual_operators(model: AffineModel) -> list:
    """Affine stiffness terms in canonical order: K0, then per subdomain
    the xx, yy and symmetrized xy blocks (all symmetric)."""
    ops = [model.stiffness_block("0")]
    for l in range(model.tri.n_subdomains):
        ops.append(model.stiffness_block("xx", l))
        ops.append(model.stiffness_block("yy", l))
        ops.append(model.stiffness_block("xy", l) + model.stiffness_block("yx", l))
    return ops


@dataclass
class ReducedSolution:
    """Solution of the reduced system at one parameter point."""

    a: NDArray                  # reduced coordinates
    p: NDArray
    cho: object = field(repr=False, default=None)   # Cholesky factor of K_r(p)


class ReducedModel:
    """Galerkin-reduced model on one parameter sub-box.

    Holds the projected affine blocks, the EMF output vector, and the
    Gram matrix of residual Riesz representers for the error bound.  All
    online operations are dense and small; they never touch the full mesh.
    """

    def __init__(self, tri: geom.MacroTriangulation, lower, upper,
                 basis: NDArray, op_blocks: NDArray, load_blocks: NDArray,
                 q_r: NDArray, gram: Optional[NDArray], magnet_ids: NDArray,
                 scale: float, history: Optional[NDArray] = None,
                 emf_target: float = DEFAULT_EMF_TARGET):
        self.tri = tri
        self.emf_target = float(emf_target)
        self.lower = np.asarray(lower, dtype=float).reshape(3)
        self.upper = np.asarray(upper, dtype=float).reshape(3)
        self.p_mid = 0.5 * (self.lower + self.upper)
        self.basis = basis                  # (n_free, d)
        self.op_blocks = op_blocks          # (1 + 3*n_sub, d, d)
        self.load_blocks = load_blocks      # (d, 1 + n_magnet)
        self.q_r = q_r                      # (d,)
        self.gram = gram                    # ((q_f + q_k d)^2, symmetric)
        self.magnet_ids = np.asarray(magnet_ids, dtype=int)
        self.scale = float(scale)
        self.history = history
        self.reduced_assemblies = 0
        self.reduced_solves = 0
        w_mid = geom.affine_weights(tri, self.p_mid)
        self._c_mid = _gradient_tensors(w_mid.theta)
        self._c_mid_inv = np.linalg.inv(self._c_mid)

    @property
    def n_basis(self) -> int:
        return self.basis.shape[1]

    # -- online operations ---------------------------------------------------

    def operator(self, p) -> tuple[NDArray, NDArray, geom.AffineWeights]:
        """Dense reduced operator and load at p."""
        w = geom.affine_weights(self.tri, p)
        k_r = np.einsum("q,qij->ij", _theta_k(w), self.op_blocks)
        rhs = self.load_blocks @ _theta_f(w, self.magnet_ids)
        self.reduced_assemblies += 1
        return k_r, rhs, w

    def solve(self, p) -> ReducedSolution:
        k_r, rhs, _ = self.operator(p)
        try:
            cho = sla.cho_factor(k_r)
        except np.linalg.LinAlgError as exc:
            raise SolveFailure(f"reduced operator not SPD at p={p}: {exc}") from exc
        a = sla.cho_solve(cho, rhs)
        self.reduced_solves += 1
        return ReducedSolution(a=a, p=np.asarray(p, dtype=float).reshape(3), cho=cho)

    def emf(self, rsol: ReducedSolution) -> float:
        return float(self.q_r @ rsol.a)

    def coercivity_lower_bound(self, p) -> float:
        w = geom.affine_weights(self.tri, p)
        return _coercivity(self._c_mid_inv, self._c_mid, _gradient_tensors(w.theta))

    def error_bound(self, p, rsol: Optional[ReducedSolution] = None) -> float:
        """Energy-norm bound Delta_u(p) >= ||u(p) - V a(p)||_{K(p_mid)}."""
        if self.gram is None:
            raise ValueError(
                "residual data not attached; call attach_error_data after loading"
            )
        if rsol is None:
            rsol = self.solve(p)
        w = geom.affine_weights(self.tri, p)
        y = np.concatenate(
            [_theta_f(w, self.magnet_ids), -np.outer(rsol.a, _theta_k(w)).ravel()]
        )
        r2 = float(y @ self.gram @ y)
        return np.sqrt(max(r2, 0.0)) / self.coercivity_lower_bound(p)

    # -- reduced sensitivities ------------------------------------------------

    def first_order(self, p, rsol: Optional[ReducedSolution] = None) -> SensitivityBundle:
        if rsol is None:
            rsol = self.solve(p)
        wd = geom.weight_derivatives(self.tri, p)
        s = np.empty((3, self.n_basis))
        for i in range(3):
            k_i = np.einsum("q,qij->ij", _theta_k_first(wd, i), self.op_blocks)
            rhs = self.load_blocks @ _theta_f_first(wd, self.magnet_ids, i)
            s[i] = sla.cho_solve(rsol.cho, rhs - k_i @ rsol.a)
            self.reduced_solves += 1
        return SensitivityBundle(p=rsol.p, s=s, grad_emf=s @ self.q_r)

    def second_order(self, p, rsol: Optional[ReducedSolution] = None,
                     bundle: Optional[SensitivityBundle] = None) -> SensitivityBundle:
        if rsol is None:
            rsol = self.solve(p)
        if bundle is None:
            bundle = self.first_order(p, rsol)
        wd = geom.weight_derivatives(self.tri, p)
        k_first = [
            np.einsum("q,qij->ij", _theta_k_first(wd, i), self.op_blocks)
            for i in range(3)
        ]
        s2 = np.empty((3, 3, self.n_basis))
        for i in range(3):
            for j in range(i, 3):
                k_ij = np.einsum("q,qij->ij", _theta_k_second(wd, i, j), self.op_blocks)
                rhs = (
                    self.load_blocks @ _theta_f_second(wd, self.magnet_ids, i, j)
                    - k_ij @ rsol.a
                    - k_first[i] @ bundle.s[j]
                    - k_first[j] @ bundle.s[i]
                )
                s2[i, j] = s2[j, i] = sla.cho_solve(rsol.cho, rhs)
                self.reduced_solves += 1
        bundle.s2 = s2
        bundle.hess_emf = s2 @ self.q_r
        return bundle

    def lift(self, rsol: ReducedSolution) -> NDArray:
        """Reconstruct the full free-DoF vector V a (offline-quality check)."""
        return self.basis @ rsol.a


# -- greedy training ----------------------------------------------------------

def greedy_train(model: AffineModel, lower, upper,
                 options: TrainingOptions = TrainingOptions(),
                 ops: Optional[list] = None) -> ReducedModel:
    """Train one reduced model on the sub-box [lower, upper].

    Each greedy step adds two snapshots at the worst training point: the
    field solution and the output-adjoint solution K(p)^-1 q_E (one extra
    back-substitution on the same factorization).  With the adjoint in the
    space, Galerkin orthogonality makes the EMF error the product of the
    primal and adjoint approximation errors, so the output stays accurate
    even where the EMF is small.  Snapshots are orthonormalized (twice) in
    the K(p_mid) inner product.  The loop stops when the error bound over
    the training grid drops below tol * ||u(p_mid)||, and raises
    TrainingFailure if max_basis is reached first.
    """
    tri = model.tri
    lower = np.asarray(lower, dtype=float).reshape(3)
    upper = np.asarray(upper, dtype=float).reshape(3)
    if np.any(upper <= lower):
        raise ValueError(f"empty training box [{lower}, {upper}]")
    p_mid = 0.5 * (lower + upper)
    if ops is None:
        ops = residual_operators(model)
    q_op = len(ops)

    k_mid, rhs_mid = model.assemble_system(p_mid)
    mlu = model.factorize(k_mid)

    axes = [np.linspace(lower[i], upper[i], options.grid_shape[i]) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    n_train = len(grid)
    w_train = [geom.affine_weights(tri, p) for p in grid]
    thf = np.stack([_theta_f(w, model.magnet_ids) for w in w_train])
    thk = np.stack([_theta_k(w) for w in w_train])
    c_mid = _gradient_tensors(geom.affine_weights(tri, p_mid).theta)
    c_mid_inv = np.linalg.inv(c_mid)
    alphas = np.array(
        [_coercivity(c_mid_inv, c_mid, _gradient_tensors(w.theta)) for w in w_train]
    )

    load_mat = np.column_stack([model.j0] + [model.jpm[k] for k in
                                             range(len(model.magnet_ids))])
    q_load = load_mat.shape[1]
    riesz = np.atleast_2d(mlu.solve(load_mat))
    gram = riesz.T @ load_mat
    r_cols = riesz                       # Riesz representers, one column per term

    def m_dot(x, y):
        return float(x @ (k_mid @ y))

    u0 = mlu.solve(rhs_mid)
    model.full_solves += 1
    scale = np.sqrt(m_dot(u0, u0))
    if not np.isfinite(scale) or scale <= 0.0:
        raise TrainingFailure(f"degenerate first snapshot at p={p_mid}")
    tol_abs = options.tol * scale

    basis = np.empty((model.n_free, 0))
    op_blocks = np.zeros((q_op, 0, 0))
    load_blocks = np.empty((0, q_load))
    q_r = np.empty(0)

    def append_vector(v: NDArray) -> None:
        nonlocal basis, op_blocks, load_blocks, q_r, gram, r_cols
        wv = np.column_stack([op @ v for op in ops])            # (n, q_op)
        rv = np.atleast_2d(mlu.solve(wv))
        cross = r_cols.T @ wv                                   # old terms x new
        diag = rv.T @ wv
        m_old = gram.shape[0]
        g = np.empty((m_old + q_op, m_old + q_op))
        g[:m_old, :m_old] = gram
        g[:m_old, m_old:] = cross
        g[m_old:, :m_old] = cross.T
        g[m_old:, m_old:] = 0.5 * (diag + diag.T)
        gram = g
        r_cols = np.hstack([r_cols, rv])

        d_old = basis.shape[1]
        blocks = np.empty((q_op, d_old + 1, d_old + 1))
        blocks[:, :d_old, :d_old] = op_blocks
        if d_old:
            cross_b = basis.T @ wv                              # (d_old, q_op)
            blocks[:, :d_old, d_old] = cross_b.T
            blocks[:, d_old, :d_old] = cross_b.T
        blocks[:, d_old, d_old] = v @ wv
        op_blocks = blocks
        load_blocks = np.vstack([load_blocks, v @ load_mat])
        q_r = np.append(q_r, v @ model.q_emf)
        basis = np.column_stack([basis, v])

    def orthonormalize(u: NDArray) -> Optional[NDArray]:
        v = u.copy()
        for _ in range(2):
            if basis.shape[1]:
                v -= basis @ (basis.T @ (k_mid @ v))
        nrm = np.sqrt(max(m_dot(v, v), 0.0))
        if nrm <= options.dependent_tol * scale:
            return None
        return v / nrm

    v0 = orthonormalize(u0)
    if v0 is None:
        raise TrainingFailure(f"first snapshot vanished at p={p_mid}")
    append_vector(v0)
    z0 = orthonormalize(mlu.solve(model.q_emf))
    model.full_solves += 1
    if z0 is not None:
        append_vector(z0)

    excluded = np.zeros(n_train, dtype=bool)
    history = []
    while True:
        k_all = np.einsum("tq,qij->tij", thk, op_blocks)
        rhs_all = thf @ load_blocks.T
        a_all = np.linalg.solve(k_all, rhs_all[:, :, None])[:, :, 0]
        d = basis.shape[1]
        y = np.empty((n_train, q_load + q_op * d))
        y[:, :q_load] = thf
        y[:, q_load:] = -(a_all[:, :, None] * thk[:, None, :]).reshape(n_train, -1)
        r2 = np.einsum("tm,tm->t", y @ gram, y)
        bounds = np.sqrt(np.maximum(r2, 0.0)) / alphas
        live = np.where(excluded, -np.inf, bounds)
        worst = int(np.argmax(live))
        history.append((d, grid[worst], float(bounds[worst] / scale)))
        if live[worst] <= tol_abs:
            break
        if d >= options.max_basis:
            raise TrainingFailure(
                f"error bound {live[worst] / scale:.3e} above tol {options.tol:.3e} "
                f"with {d} basis vectors on box [{lower}, {upper}]"
            )
        sol = model.solve(grid[worst])
        adjoint = sol.lu.solve(model.q_emf)
        model.full_solves += 1
        excluded[worst] = True
        for u in (sol.u, adjoint):        # dependent snapshots are dropped
            v = orthonormalize(u)
            if v is not None:
                append_vector(v)

    hist = np.array([[h[0], *h[1], h[2]] for h in history])
    return ReducedModel(
        tri, lower, upper, basis, op_blocks, load_blocks, q_r, gram,
        model.magnet_ids, scale, history=hist, emf_target=model.emf_target,
    )


# -- dictionary ---------------------------------------------------------------

class Dictionary:
    """Partition of the parameter box with one reduced model per sub-box."""

    def __init__(self, breakpoints: Sequence, models: dict,
                 signature: tuple):
        self.breakpoints = tuple(np.asarray(b, dtype=float) for b in breakpoints)
        self.models = models
        self.signature = signature

    @property
    def n_models(self) -> int:
        return len(self.models)

    @property
    def basis_sizes(self) -> NDArray:
        return np.array([m.n_basis for m in self.models.values()])

    @property
    def reduced_solves(self) -> int:
        return sum(m.reduced_solves for m in self.models.values())

    @property
    def reduced_assemblies(self) -> int:
        return sum(m.reduced_assemblies for m in self.models.values())

    def cube_index(self, p) -> tuple:
        p = np.asarray(p, dtype=float).reshape(3)
        idx = []
        for b, x in zip(self.breakpoints, p):
            if x < b[0] - 1e-9 or x > b[-1] + 1e-9:
                raise InfeasibleParameter(
                    f"parameter {p} outside the dictionary box "
                    f"[{[float(v[0]) for v in self.breakpoints]}, "
                    f"{[float(v[-1]) for v in self.breakpoints]}]"
                )
            idx.append(int(np.clip(np.searchsorted(b, x, side="left") - 1,
                                   0, len(b) - 2)))
        return tuple(idx)

    def lookup(self, p) -> ReducedModel:
        return self.models[self.cube_index(p)]

    def attach_error_data(self, model: AffineModel) -> None:
        """Rebuild residual data for every sub-box that lacks it."""
        ops = residual_operators(model)
        for m in self.models.values():
            if m.gram is None:
                attach_error_data(model, m, ops=ops)

    # -- persistence ----------------------------------------------------------

    def save(self, path: str, include_error_data: bool = False) -> None:
        """Serialize all sub-box models.

        The Riesz Gram matrices dominate the size (tens of MB per sub-box)
        and can be rebuilt from the basis, so they are skipped by default.
        """
        arrays = {}
        cubes = []
        for n, (key, m) in enumerate(sorted(self.models.items())):
            cubes.append({"key": list(key), "n_basis": m.n_basis})
            tag = f"c{n}_"
            arrays[tag + "lower"] = m.lower
            arrays[tag + "upper"] = m.upper
            arrays[tag + "basis"] = m.basis
            arrays[tag + "op_blocks"] = m.op_blocks
            arrays[tag + "load_blocks"] = m.load_blocks
            arrays[tag + "q_r"] = m.q_r
            if include_error_data and m.gram is not None:
                arrays[tag + "gram"] = m.gram
            arrays[tag + "scale"] = np.array(m.scale)
            if m.history is not None:
                arrays[tag + "history"] = m.history
        meta = {
            "format": 1,
            "breakpoints": [list(map(float, b)) for b in self.breakpoints],
            "signature": json.loads(json.dumps(self.signature, default=list)),
            "cubes": cubes,
        }
        arrays["meta"] = np.array(json.dumps(meta))
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path: str, model: AffineModel) -> "Dictionary":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            expected = json.loads(json.dumps(model.signature(), default=list))
            if meta["signature"] != expected:
                raise ConfigError(
                    f"dictionary {path} was trained on a different model "
                    f"(signature mismatch)"
                )
            models = {}
            for n, cube in enumerate(meta["cubes"]):
                tag = f"c{n}_"
                m = ReducedModel(
                    model.tri,
                    data[tag + "lower"], data[tag + "upper"],
                    data[tag + "basis"], data[tag + "op_blocks"],
                    data[tag + "load_blocks"], data[tag + "q_r"],
                    data[tag + "gram"] if tag + "gram" in data else None,
                    model.magnet_ids,
                    float(data[tag + "scale"]),
                    history=data[tag + "history"] if tag + "history" in data else None,
                    emf_target=model.emf_target,
                )
                models[tuple(cube["key"])] = m
        return cls(meta["breakpoints"], models, model.signature())


def attach_error_data(model: AffineModel, rm: ReducedModel,
                      ops: Optional[list] = None) -> None:
    """Recompute the Riesz Gram matrix of a (deserialized) reduced model.

    Column order matches greedy training: load terms first, then one group
    of operator terms per basis vector, so rebuilt bounds agree with the
    trained ones up to round-off.
    """
    if ops is None:
        ops = residual_operators(model)
    k_mid, _ = model.assemble_system(rm.p_mid)
    mlu = model.factorize(k_mid)
    cols = [np.column_stack([model.j0] + [model.jpm[k] for k in
                                          range(len(model.magnet_ids))])]
    for i in range(rm.n_basis):
        v = rm.basis[:, i]
        cols.append(np.column_stack([op @ v for op in ops]))
    w_all = np.hstack(cols)
    riesz = np.atleast_2d(mlu.solve(w_all))
    gram = riesz.T @ w_all
    rm.gram = 0.5 * (gram + gram.T)


def build_dictionary(model: AffineModel,
                     breakpoints: Optional[Sequence] = None,
                     options: TrainingOptions = TrainingOptions(),
                     n_threads: Optional[int] = None,
                     keep_error_data: bool = False) -> Dictionary:
    """Train every sub-box reduced model (sub-boxes run in a thread pool).

    Riesz Gram matrices can reach ~100 MB on the largest sub-boxes, so by
    default each one is released once its sub-box is trained; certification
    re-attaches them one sub-box at a time via attach_error_data.
    """
    if breakpoints is None:
        breakpoints = DEFAULT_BREAKPOINTS
    breakpoints = tuple(np.asarray(b, dtype=float) for b in breakpoints)
    for b in breakpoints:
        if len(b) < 2 or np.any(np.diff(b) <= 0):
            raise ValueError(f"breakpoints must be strictly increasing: {b}")
    if n_threads is None:
        n_threads = min(4, os.cpu_count() or 1)
    ops = residual_operators(model)

    keys = [
        (i, j, k)
        for i in range(len(breakpoints[0]) - 1)
        for j in range(len(breakpoints[1]) - 1)
        for k in range(len(breakpoints[2]) - 1)
    ]

    def train(key):
        lo = np.array([breakpoints[d][key[d]] for d in range(3)])
        hi = np.array([breakpoints[d][key[d] + 1] for d in range(3)])
        rm = greedy_train(model, lo, hi, options=options, ops=ops)
        if not keep_error_data:
            rm.gram = None
        return key, rm

    models = {}
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        for key, m in pool.map(train, keys):
            models[key] = m
    return Dictionary(breakpoints, models, model.signature())
