"""Fine triangular mesh: refined macro-triangles plus a conforming outer grid.

Each macro-triangle of the decomposition box is uniformly refined `levels`
times (4^levels fine triangles per macro-triangle).  The rest of the window
(rotor remainder, airgap band, stator) is covered by a structured grid of
rectangles split into two triangles each, with grid lines chosen so that the
outer mesh matches the refined box-boundary nodes exactly.  Every fine node
carries an affine position map p -> const + lin @ p; only nodes strictly
inside the decomposition box actually move with p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geom import AIR, IRON, MacroTriangulation

_KEY_DECIMALS = 9


@dataclass
class FineMesh:
    """Conforming triangle mesh of the whole window with affine node maps."""

    levels: int
    node_const: NDArray         # (n_nodes, 2)
    node_lin: NDArray           # (n_nodes, 2, 3)
    triangles: NDArray          # (n_tris, 3) int
    tri_macro: NDArray          # (n_tris,) int, -1 for parameter-independent
    tri_region: NDArray         # (n_tris,) int, IRON / MAGNET / AIR
    dirichlet: NDArray          # (n_nodes,) bool, outer-boundary nodes
    probe_nodes: tuple[int, int]   # airgap probe nodes (left, right)
    probe_xy: NDArray           # (2, 2)

    @property
    def n_nodes(self) -> int:
        return len(self.node_const)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def positions(self, p) -> NDArray:
        p = np.asarray(p, dtype=float).reshape(3)
        return self.node_const + self.node_lin @ p


def _key(x: float, y: float) -> tuple[float, float]:
    return (round(float(x), _KEY_DECIMALS), round(float(y), _KEY_DECIMALS))


def _refine_macro(tri: MacroTriangulation, levels: int):
    """Barycentric lattice refinement of every macro-triangle.

    Returns per-macro node affine maps and fine connectivity in local
    (per-macro) node numbering; merging happens in build_mesh.
    """
    n = 1 << levels
    # lattice index (i, j): bary = (i/n, j/n, 1 - i/n - j/n) on (a, b, c)
    ij = [(i, j) for i in range(n + 1) for j in range(n + 1 - i)]
    local = {pair: k for k, pair in enumerate(ij)}
    bary = np.array([(i / n, j / n, 1.0 - (i + j) / n) for i, j in ij])
    cells = []
    for i in range(n):
        for j in range(n - i):
            v00 = local[(i, j)]
            v10 = local[(i + 1, j)]
            v01 = local[(i, j + 1)]
            cells.append((v00, v10, v01))
            if i + j < n - 1:
                v11 = local[(i + 1, j + 1)]
                cells.append((v10, v11, v01))
    return bary, np.array(cells, dtype=int)


def _grid_lines(spec, levels: int):
    """Grid lines of the outer structured mesh, conforming to the box edges."""
    n_edge = 1 << (levels + 1)
    hx = spec.box_width / n_edge
    hy = spec.box_height / n_edge

    def _span(a: float, b: float, h: float) -> NDArray:
        cells = max(1, round((b - a) / h))
        return np.linspace(a, b, cells + 1)

    xs = np.concatenate(
        [
            _span(0.0, spec.box_x0, hx),
            spec.box_x0 + hx * np.arange(1, n_edge),
            _span(spec.box_x1, spec.domain_width, hx),
        ]
    )
    gap0, gap1 = spec.rotor_height, spec.rotor_height + spec.airgap_height
    half_gap = max(1, round(0.5 * spec.airgap_height / hy))
    ys = np.concatenate(
        [
            _span(0.0, spec.box_y0, hy),
            spec.box_y0 + hy * np.arange(1, n_edge),
            np.linspace(gap0, gap1, 2 * half_gap + 1),
            _span(gap1, spec.domain_height, hy)[1:],
        ]
    )
    return np.unique(np.round(xs, _KEY_DECIMALS)), np.unique(np.round(ys, _KEY_DECIMALS))


def build_mesh(tri: MacroTriangulation, levels: int = 4) -> FineMesh:
    """Build the conforming fine mesh for a macro-triangulation."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    spec = tri.spec

    nodes_const: list = []
    nodes_lin: list = []
    index: dict = {}

    def _add(const_xy, lin_xy) -> int:
        k = _key(const_xy[0] + lin_xy[0] @ tri.p_ref, const_xy[1] + lin_xy[1] @ tri.p_ref)
        i = index.get(k)
        if i is None:
            i = len(nodes_const)
            index[k] = i
            nodes_const.append(np.asarray(const_xy, dtype=float))
            nodes_lin.append(np.asarray(lin_xy, dtype=float))
        return i

    tris: list = []
    tri_macro: list = []
    tri_region: list = []

    bary, cells = _refine_macro(tri, levels)
    for m, (ia, ib, ic) in enumerate(tri.triangles):
        vc = tri.v_const[[ia, ib, ic]]          # (3, 2)
        vl = tri.v_lin[[ia, ib, ic]]            # (3, 2, 3)
        n_const = bary @ vc                     # (k, 2)
        n_lin = np.einsum("kv,vxp->kxp", bary, vl)
        ids = [_add(n_const[k], n_lin[k]) for k in range(len(bary))]
        for a, b, c in cells:
            tris.append((ids[a], ids[b], ids[c]))
            tri_macro.append(m)
            tri_region.append(tri.tags[m])

    xs, ys = _grid_lines(spec, levels)
    gap0, gap1 = spec.rotor_height, spec.rotor_height + spec.airgap_height
    zero_lin = np.zeros((2, 3))
    grid_ids: dict = {}

    def _grid_node(i: int, j: int) -> int:
        k = (i, j)
        g = grid_ids.get(k)
        if g is None:
            g = _add((xs[i], ys[j]), zero_lin)
            grid_ids[k] = g
        return g

    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (ys[j] + ys[j + 1])
            if (spec.box_x0 < cx < spec.box_x1) and (spec.box_y0 < cy < spec.box_y1):
                continue                        # covered by refined macro-triangles
            region = AIR if gap0 < cy < gap1 else IRON
            n00 = _grid_node(i, j)
            n10 = _grid_node(i + 1, j)
            n01 = _grid_node(i, j + 1)
            n11 = _grid_node(i + 1, j + 1)
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
            tri_macro += [-1, -1]
            tri_region += [region, region]

    node_const = np.array(nodes_const)
    node_lin = np.array(nodes_lin)
    triangles = np.array(tris, dtype=int)

    pos_ref = node_const + node_lin @ tri.p_ref
    tol = 10.0 ** (-_KEY_DECIMALS + 1)
    dirichlet = (
        (np.abs(pos_ref[:, 0]) < tol)
        | (np.abs(pos_ref[:, 0] - spec.domain_width) < tol)
        | (np.abs(pos_ref[:, 1]) < tol)
        | (np.abs(pos_ref[:, 1] - spec.domain_height) < tol)
    )

    y_probe = spec.rotor_height + 0.5 * spec.airgap_height
    probe_xy = np.array([[spec.box_x0, y_probe], [spec.box_x1, y_probe]])
    try:
        probes = (index[_key(*probe_xy[0])], index[_key(*probe_xy[1])])
    except KeyError as exc:
        raise RuntimeError(f"probe node missing from mesh: {exc}") from None

    mesh = FineMesh(
        levels=levels,
        node_const=node_const,
        node_lin=node_lin,
        triangles=triangles,
        tri_macro=np.array(tri_macro, dtype=int),
        tri_region=np.array(tri_region, dtype=int),
        dirichlet=dirichlet,
        probe_nodes=probes,
        probe_xy=probe_xy,
    )
    _check_conforming(mesh)
    return mesh


def _check_conforming(mesh: FineMesh) -> None:
    a = mesh.triangles
    if a.min() < 0 or a.max() >= mesh.n_nodes:
        raise RuntimeError("mesh connectivity references unknown nodes")
    if mesh.dirichlet[list(mesh.probe_nodes)].any():
        raise RuntimeError("probe nodes fell on the Dirichlet boundary")
