"""Parametrized pole-window geometry and its affine decomposition.

The model domain is a rectangular window of an electric machine: a rotor
block, a thin airgap band and a stator block, all enclosed by a flux-parallel
(homogeneous Dirichlet) outer boundary.  A rectangular permanent magnet is
buried in the rotor below the rotor surface.  Three lengths parametrize the
design,

    p1  magnet width            (x extent)
    p2  magnet height           (y extent)
    p3  burial depth of the magnet top edge below the rotor surface

all in millimetres.  The magnet sits inside a fixed "decomposition box" whose
top edge is the rotor surface.  The box is split into N_L = 16 macro-triangles
by connecting the four magnet corners to the box corners and edge midpoints
(12 ring triangles, iron) and fanning the magnet rectangle around its center
(4 triangles, magnet).  Every macro-vertex position is an affine function of
p, so the deformation of each macro-triangle relative to the reference design
is an affine map whose metric factors give the classic four stiffness weights
(xx, yy, xy, yx) and one source weight per subdomain.  Everything outside the
box is parameter independent.

Weights are exact rational functions of p.  They are represented here as
quadratic numerator/denominator polynomials in (p - p_ref), so values and
first/second derivatives are analytic, and at p_ref the weight tensor is the
identity by construction (xx = yy = source = 1, xy = yx = 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateGeometry

# region tags for macro-triangles (the fine mesh adds AIR for the gap band)
IRON = 0
MAGNET = 1
AIR = 2

REGION_NAMES = ("iron", "magnet", "air")

# weight channels
W_XX, W_YY, W_XY, W_YX, W_SRC = 0, 1, 2, 3, 4

N_MACRO = 16

# monomial order for quadratic polynomials in (d1, d2, d3) = p - p_ref:
# [1, d1, d2, d3, d1^2, d1*d2, d1*d3, d2^2, d2*d3, d3^2]
_QUAD = 10


@dataclass(frozen=True)
class GeometryNumbers:
    """Fixed dimensions (mm) of the pole window and the admissible design box.

    The defaults define the benchmark machine section.  The parameter box
    (p_lower, p_upper) is the set over which the affine decomposition must
    stay valid; it equals the span of the reduced-basis dictionary grid.
    """

    domain_width: float = 40.0
    rotor_height: float = 30.0
    airgap_height: float = 1.0
    stator_height: float = 9.0
    box_width: float = 30.0
    box_height: float = 27.0
    p_ref: tuple[float, float, float] = (19.0, 7.0, 7.0)
    p_lower: tuple[float, float, float] = (0.5, 0.5, 4.5)
    p_upper: tuple[float, float, float] = (26.5, 10.5, 14.5)

    @property
    def domain_height(self) -> float:
        return self.rotor_height + self.airgap_height + self.stator_height

    @property
    def center_x(self) -> float:
        return 0.5 * self.domain_width

    @property
    def box_x0(self) -> float:
        return self.center_x - 0.5 * self.box_width

    @property
    def box_x1(self) -> float:
        return self.center_x + 0.5 * self.box_width

    @property
    def box_y0(self) -> float:
        return self.rotor_height - self.box_height

    @property
    def box_y1(self) -> float:
        return self.rotor_height


@dataclass
class AffineWeights:
    """Stiffness and source weights of all macro-subdomains at one point.

    theta[l] holds (xx, yy, xy, yx) for subdomain l; xy and yx are equal
    because the deformation metric is symmetric.  theta_src[l] multiplies the
    reference magnetization load of subdomain l (1 for non-magnet ring
    triangles, where it is never used).
    """

    p: NDArray
    theta: NDArray          # (N_MACRO, 4)
    theta_src: NDArray      # (N_MACRO,)
    det: NDArray            # (N_MACRO,) area ratio of each macro-triangle


@dataclass
class WeightDerivatives:
    """Analytic first and second parameter derivatives of all weights.

    Channel order along axis 1: (xx, yy, xy, yx, src).
    """

    p: NDArray
    first: NDArray          # (N_MACRO, 5, 3)
    second: NDArray         # (N_MACRO, 5, 3, 3)


@dataclass
class MacroTriangulation:
    """Macro-triangulation of the decomposition box with affine vertex maps.

    Vertex positions are v_const + v_lin @ p.  Triangles are CCW at p_ref and
    stay CCW over the whole parameter box (checked at construction).
    """

    spec: GeometryNumbers
    v_const: NDArray        # (n_verts, 2)
    v_lin: NDArray          # (n_verts, 2, 3)
    triangles: NDArray      # (N_MACRO, 3) int
    tags: NDArray           # (N_MACRO,) int, IRON or MAGNET
    p_ref: NDArray          # (3,)
    # quadratic weight polynomials in (p - p_ref), see module docstring
    _num: NDArray = field(repr=False, default=None)        # (N_MACRO, 3, _QUAD)
    _den: NDArray = field(repr=False, default=None)        # (N_MACRO, _QUAD)
    _src: NDArray = field(repr=False, default=None)        # (N_MACRO, 4) affine
    _num_grad: NDArray = field(repr=False, default=None)   # (N_MACRO, 3, 3, 4)
    _num_hess: NDArray = field(repr=False, default=None)   # (N_MACRO, 3, 3, 3)
    _den_grad: NDArray = field(repr=False, default=None)   # (N_MACRO, 3, 4)
    _den_hess: NDArray = field(repr=False, default=None)   # (N_MACRO, 3, 3)

    @property
    def n_subdomains(self) -> int:
        return len(self.triangles)

    @property
    def magnet_subdomains(self) -> NDArray:
        return np.flatnonzero(self.tags == MAGNET)

    def vertex_positions(self, p) -> NDArray:
        p = _check_p(p)
        return self.v_const + self.v_lin @ p

    def triangle_areas(self, p) -> NDArray:
        v = self.vertex_positions(p)
        a, b, c = (v[self.triangles[:, k]] for k in range(3))
        u, v = b - a, c - a
        return 0.5 * (u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])

    def dump(self, p=None) -> str:
        """Plain-text mesh dump: vertices at p, triangles, region tags."""
        p = self.p_ref if p is None else _check_p(p)
        v = self.vertex_positions(p)
        lines = [
            f"# macro-triangulation: {len(v)} vertices, {len(self.triangles)} triangles",
            "# p = " + " ".join(repr(float(x)) for x in p),
        ]
        lines += [f"v {x!r} {y!r}" for x, y in v]
        lines += [
            f"t {i} {j} {k} {REGION_NAMES[t]}"
            for (i, j, k), t in zip(self.triangles, self.tags)
        ]
        return "\n".join(lines) + "\n"


def _check_p(p) -> NDArray:
    p = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"non-finite parameter vector {p}")
    return p


def _monomials(d: NDArray) -> NDArray:
    d1, d2, d3 = d
    return np.array(
        [1.0, d1, d2, d3, d1 * d1, d1 * d2, d1 * d3, d2 * d2, d2 * d3, d3 * d3]
    )


def _affine_mul(a: NDArray, b: NDArray) -> NDArray:
    """Product of two affine polynomials [c0, c1, c2, c3] as a quadratic."""
    q = np.zeros(a.shape[:-1] + (_QUAD,))
    q[..., 0] = a[..., 0] * b[..., 0]
    q[..., 1] = a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0]
    q[..., 2] = a[..., 0] * b[..., 2] + a[..., 2] * b[..., 0]
    q[..., 3] = a[..., 0] * b[..., 3] + a[..., 3] * b[..., 0]
    q[..., 4] = a[..., 1] * b[..., 1]
    q[..., 5] = a[..., 1] * b[..., 2] + a[..., 2] * b[..., 1]
    q[..., 6] = a[..., 1] * b[..., 3] + a[..., 3] * b[..., 1]
    q[..., 7] = a[..., 2] * b[..., 2]
    q[..., 8] = a[..., 2] * b[..., 3] + a[..., 3] * b[..., 2]
    q[..., 9] = a[..., 3] * b[..., 3]
    return q


def _quad_grad(q: NDArray) -> NDArray:
    """Gradient of a quadratic: three affine polynomials, shape (..., 3, 4)."""
    g = np.zeros(q.shape[:-1] + (3, 4))
    g[..., 0, 0] = q[..., 1]
    g[..., 0, 1] = 2.0 * q[..., 4]
    g[..., 0, 2] = q[..., 5]
    g[..., 0, 3] = q[..., 6]
    g[..., 1, 0] = q[..., 2]
    g[..., 1, 1] = q[..., 5]
    g[..., 1, 2] = 2.0 * q[..., 7]
    g[..., 1, 3] = q[..., 8]
    g[..., 2, 0] = q[..., 3]
    g[..., 2, 1] = q[..., 6]
    g[..., 2, 2] = q[..., 8]
    g[..., 2, 3] = 2.0 * q[..., 9]
    return g


def _quad_hess(q: NDArray) -> NDArray:
    """Constant Hessian of a quadratic, shape (..., 3, 3)."""
    h = np.zeros(q.shape[:-1] + (3, 3))
    h[..., 0, 0] = 2.0 * q[..., 4]
    h[..., 1, 1] = 2.0 * q[..., 7]
    h[..., 2, 2] = 2.0 * q[..., 9]
    h[..., 0, 1] = h[..., 1, 0] = q[..., 5]
    h[..., 0, 2] = h[..., 2, 0] = q[..., 6]
    h[..., 1, 2] = h[..., 2, 1] = q[..., 8]
    return h


def build_geometry(spec: GeometryNumbers | None = None) -> MacroTriangulation:
    """Construct and validate the macro-triangulation for a geometry spec.

    Raises DegenerateGeometry if the magnet rectangle is not strictly inside
    the decomposition box for every corner of the parameter box, or if any
    macro-triangle has nonpositive area there.
    """
    spec = spec or GeometryNumbers()
    lo = np.asarray(spec.p_lower, dtype=float)
    hi = np.asarray(spec.p_upper, dtype=float)
    p_ref = np.asarray(spec.p_ref, dtype=float)
    if np.any(lo <= 0.0) or np.any(hi < lo):
        raise DegenerateGeometry(f"invalid parameter box {lo} .. {hi}")
    if np.any(p_ref < lo) or np.any(p_ref > hi):
        raise DegenerateGeometry(f"reference design {p_ref} outside parameter box")
    if spec.box_y0 <= 0.0 or spec.box_x0 <= 0.0:
        raise DegenerateGeometry("decomposition box does not fit inside the rotor")
    # magnet strictly inside the box for every admissible design
    side = 0.5 * (spec.box_width - hi[0])
    top = lo[2]
    bottom = spec.box_height - (hi[1] + hi[2])
    if min(side, top, bottom) <= 0.0:
        raise DegenerateGeometry(
            "magnet touches the decomposition box for some admissible design: "
            f"margins side={side} top={top} bottom={bottom} (mm)"
        )

    cx = spec.center_x
    x0, x1 = spec.box_x0, spec.box_x1
    y0, y1 = spec.box_y0, spec.box_y1
    ym = 0.5 * (y0 + y1)

    # 8 fixed boundary vertices, 4 magnet corners, magnet center
    v_const = np.array(
        [
            [x0, y0], [cx, y0], [x1, y0], [x1, ym],
            [x1, y1], [cx, y1], [x0, y1], [x0, ym],
            [cx, y1],           # 8  magnet bottom-left  (cx - p1/2, y1 - p2 - p3)
            [cx, y1],           # 9  magnet bottom-right (cx + p1/2, y1 - p2 - p3)
            [cx, y1],           # 10 magnet top-right    (cx + p1/2, y1 - p3)
            [cx, y1],           # 11 magnet top-left     (cx - p1/2, y1 - p3)
            [cx, y1],           # 12 magnet center       (cx, y1 - p2/2 - p3)
        ]
    )
    v_lin = np.zeros((13, 2, 3))
    v_lin[8] = [[-0.5, 0.0, 0.0], [0.0, -1.0, -1.0]]
    v_lin[9] = [[+0.5, 0.0, 0.0], [0.0, -1.0, -1.0]]
    v_lin[10] = [[+0.5, 0.0, 0.0], [0.0, 0.0, -1.0]]
    v_lin[11] = [[-0.5, 0.0, 0.0], [0.0, 0.0, -1.0]]
    v_lin[12] = [[0.0, 0.0, 0.0], [0.0, -0.5, -1.0]]

    triangles = np.array(
        [
            (0, 1, 8), (1, 9, 8), (1, 2, 9), (2, 3, 9),
            (3, 10, 9), (3, 4, 10), (4, 5, 10), (5, 11, 10),
            (5, 6, 11), (6, 7, 11), (7, 8, 11), (7, 0, 8),
            (8, 9, 12), (9, 10, 12), (10, 11, 12), (11, 8, 12),
        ],
        dtype=int,
    )
    tags = np.array([IRON] * 12 + [MAGNET] * 4, dtype=int)

    tri = MacroTriangulation(
        spec=spec, v_const=v_const, v_lin=v_lin,
        triangles=triangles, tags=tags, p_ref=p_ref,
    )
    _build_weight_polynomials(tri)

    # no macro-triangle may invert anywhere on the corners of the parameter box
    corners = [p_ref] + [
        np.array([b1, b2, b3])
        for b1 in (lo[0], hi[0]) for b2 in (lo[1], hi[1]) for b3 in (lo[2], hi[2])
    ]
    for p in corners:
        areas = tri.triangle_areas(p)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise DegenerateGeometry(
                f"macro-triangle {bad} inverts at p={p} (area {areas[bad]:.3e})"
            )
    return tri


def _build_weight_polynomials(tri: MacroTriangulation) -> None:
    """Precompute the rational weight polynomials in (p - p_ref) coordinates.

    For each macro-triangle the deformation relative to p_ref is x = B(p) x̂ + b
    with B affine in p and B(p_ref) = I exactly.  The stiffness weight tensor
    is C = adj(B) adj(B)^T / det(B) and the source weight is adj(B)[0, 0].
    """
    p_ref = tri.p_ref
    verts_ref = tri.vertex_positions(p_ref)
    n = len(tri.triangles)

    num = np.zeros((n, 3, _QUAD))
    den = np.zeros((n, _QUAD))
    src = np.zeros((n, 4))
    shear = np.zeros((n, 4))

    for t, (ia, ib, ic) in enumerate(tri.triangles):
        # current edge matrix, affine in d = p - p_ref:
        # E(d) = E_ref + sum_i d_i * L[:, :, i]
        e_ref = np.column_stack(
            [verts_ref[ib] - verts_ref[ia], verts_ref[ic] - verts_ref[ia]]
        )
        lin = np.stack(
            [tri.v_lin[ib] - tri.v_lin[ia], tri.v_lin[ic] - tri.v_lin[ia]], axis=1
        )  # (2, 2, 3): [row, edge, param]
        r = np.linalg.inv(e_ref)
        # B(d) = E(d) @ inv(E_ref) = I + sum_i d_i * (L_i @ inv(E_ref))
        b_aff = np.zeros((2, 2, 4))
        b_aff[:, :, 0] = np.eye(2)
        for i in range(3):
            b_aff[:, :, i + 1] = lin[:, :, i] @ r

        b11, b12 = b_aff[0, 0], b_aff[0, 1]
        b21, b22 = b_aff[1, 0], b_aff[1, 1]
        den[t] = _affine_mul(b11, b22) - _affine_mul(b12, b21)
        num[t, 0] = _affine_mul(b22, b22) + _affine_mul(b12, b12)     # xx
        num[t, 1] = _affine_mul(b21, b21) + _affine_mul(b11, b11)     # yy
        num[t, 2] = -_affine_mul(b22, b21) - _affine_mul(b12, b11)    # xy = yx
        src[t] = b22
        shear[t] = b21

    if np.any(np.abs(shear[tri.tags == MAGNET]) > 1e-12):
        # the single-source-weight decomposition needs magnet maps without
        # x-to-y shear; the fan layout guarantees this
        raise DegenerateGeometry("magnet subdomain map has x-y shear")

    tri._num = num
    tri._den = den
    tri._src = src
    tri._num_grad = _quad_grad(num)
    tri._num_hess = _quad_hess(num)
    tri._den_grad = _quad_grad(den)
    tri._den_hess = _quad_hess(den)


def affine_weights(tri: MacroTriangulation, p) -> AffineWeights:
    """Evaluate all subdomain weights at a parameter point.

    Raises DegenerateGeometry if any macro-triangle inverts at p.
    """
    p = _check_p(p)
    mono = _monomials(p - tri.p_ref)
    det = tri._den @ mono
    if np.any(det <= 0.0):
        bad = int(np.argmin(det))
        raise DegenerateGeometry(
            f"macro-triangle {bad} inverts at p={p} (area ratio {det[bad]:.3e})"
        )
    nv = tri._num @ mono            # (n, 3)
    theta = np.empty((len(det), 4))
    theta[:, W_XX] = nv[:, 0] / det
    theta[:, W_YY] = nv[:, 1] / det
    theta[:, W_XY] = nv[:, 2] / det
    theta[:, W_YX] = theta[:, W_XY]
    theta_src = tri._src @ np.concatenate(([1.0], p - tri.p_ref))
    return AffineWeights(p=p, theta=theta, theta_src=theta_src, det=det)


def weight_derivatives(tri: MacroTriangulation, p) -> WeightDerivatives:
    """Analytic first/second derivatives of every weight at p.

    Uses the quotient rule on the quadratic numerator/denominator polynomials,
    so mixed second derivatives are symmetric to machine precision.
    """
    p = _check_p(p)
    d = p - tri.p_ref
    mono = _monomials(d)
    av = np.concatenate(([1.0], d))

    nval = tri._num @ mono                          # (n, 3)
    dval = tri._den @ mono                          # (n,)
    if np.any(dval <= 0.0):
        raise DegenerateGeometry(f"macro-triangle inverts at p={p}")
    ngrad = tri._num_grad @ av                      # (n, 3, 3)
    dgrad = tri._den_grad @ av                      # (n, 3)
    nhess = tri._num_hess                           # (n, 3, 3, 3)
    dhess = tri._den_hess                           # (n, 3, 3)

    inv_d = 1.0 / dval
    first = np.zeros((len(dval), 5, 3))
    second = np.zeros((len(dval), 5, 3, 3))
    for ch in range(3):
        nv = nval[:, ch][:, None]
        ng = ngrad[:, ch]                           # (n, 3)
        f1 = ng * inv_d[:, None] - nv * dgrad * inv_d[:, None] ** 2
        cross = ng[:, :, None] * dgrad[:, None, :]
        f2 = (
            nhess[:, ch] * inv_d[:, None, None]
            - (cross + cross.transpose(0, 2, 1) + nv[:, :, None] * dhess)
            * inv_d[:, None, None] ** 2
            + 2.0 * nv[:, :, None] * dgrad[:, :, None] * dgrad[:, None, :]
            * inv_d[:, None, None] ** 3
        )
        first[:, ch] = f1
        second[:, ch] = f2
    first[:, W_YX] = first[:, W_XY]
    second[:, W_YX] = second[:, W_XY]
    first[:, W_SRC] = tri._src[:, 1:]
    # source weights are affine in p: second derivatives vanish
    return WeightDerivatives(p=p, first=first, second=second)
