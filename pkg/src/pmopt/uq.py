"""Stochastic moments of design quantities under uniform parameter scatter.

Manufacturing scatter is modeled as independent uniform perturbations
xi_i ~ U(-delta_i, +delta_i) around a design point.  Moments of a quantity
q(p + xi) are estimated three ways:

* tensor-product Gauss-Legendre quadrature with probability weights,
* plain Monte Carlo with a counter-based generator (reproducible),
* first-order linearization, std[q] ~= || std[xi] o grad q ||_2.

First-order Sobol indices decompose the quadrature variance by input.
Estimators accept scalar- or vector-valued quantities and can also return
the derivative of each moment with respect to the design point: the
offsets are held fixed while the center moves (common quadrature nodes,
common random numbers), so moments are smooth functions of the design.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Callable, Optional, Union

import numpy as np
from numpy.typing import NDArray

from .errors import ZeroVariance

Scalar = Union[float, NDArray]


@dataclass(frozen=True)
class UniformBox:
    """Axis-aligned uniform distribution p + xi, xi_i ~ U(-h_i, +h_i)."""

    center: NDArray
    half_width: NDArray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        h = np.asarray(self.half_width, dtype=float).reshape(-1)
        if h.size == 1 and c.size > 1:
            h = np.full(c.size, h[0])
        if c.shape != h.shape:
            raise ValueError(f"center/half_width shapes differ: {c.shape} vs {h.shape}")
        if np.any(h < 0.0):
            raise ValueError(f"negative half width: {h}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_width", h)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def lower(self) -> NDArray:
        return self.center - self.half_width

    @property
    def upper(self) -> NDArray:
        return self.center + self.half_width

    @property
    def std(self) -> NDArray:
        """Per-coordinate standard deviation of the uniform perturbation."""
        return self.half_width / np.sqrt(3.0)

    def sample(self, n: int, rng: np.random.Generator) -> NDArray:
        """n independent draws, shape (n, dim)."""
        offsets = rng.uniform(-1.0, 1.0, size=(n, self.dim)) * self.half_width
        return self.center + offsets


@dataclass
class MomentEstimate:
    """Mean/std of a quantity, optionally with design derivatives.

    mean/std mirror the shape of the evaluated quantity (floats for scalar
    quantities).  stderr is the Monte Carlo standard error of the mean and
    None for deterministic estimators.  mean_grad/std_grad have one trailing
    axis of length dim(p) and are present only when requested.
    """

    mean: Scalar
    std: Scalar
    method: str
    n_evals: int
    stderr: Optional[Scalar] = None
    mean_grad: Optional[NDArray] = None
    std_grad: Optional[NDArray] = None


def _restore(a: NDArray, shape: tuple) -> Scalar:
    a = a.reshape(shape)
    return float(a) if shape == () else a


def _gauss_rule(box: UniformBox, n_nodes: int) -> tuple[NDArray, NDArray]:
    """Tensor Gauss-Legendre nodes and probability weights over the box.

    Coordinates with zero half width collapse to a single node so that a
    degenerate box costs one evaluation and yields exact point statistics.
    """
    if n_nodes < 1:
        raise ValueError(f"need at least one node per axis, got {n_nodes}")
    pts, wts = [], []
    for c, h in zip(box.center, box.half_width):
        if h == 0.0:
            pts.append(np.array([c]))
            wts.append(np.array([1.0]))
        else:
            x, w = np.polynomial.legendre.leggauss(n_nodes)
            pts.append(c + h * x)
            wts.append(0.5 * w)
    grids = np.meshgrid(*pts, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = reduce(np.multiply.outer, wts).ravel()
    return nodes, weights


def _eval_batch(fun: Callable, nodes: NDArray, with_grad: bool):
    """Evaluate fun at every node; normalize to (q, k) values, (q, k, d) grads."""
    vals, grads = [], []
    for node in nodes:
        out = fun(node)
        if with_grad:
            v, g = out
            grads.append(np.asarray(g, dtype=float))
        else:
            v = out
        vals.append(np.asarray(v, dtype=float))
    shape = vals[0].shape
    flat = np.stack([v.reshape(-1) for v in vals])
    if with_grad:
        k, d = flat.shape[1], nodes.shape[1]
        gflat = np.stack([g.reshape(k, d) for g in grads])
    else:
        gflat = None
    return shape, flat, gflat


def _weighted_moments(shape, vals, grads, weights, norm, method, stderr=None):
    """Shared mean/variance reduction.

    weights are probability weights for quadrature; for Monte Carlo they are
    1/n with norm = n/(n-1) applying the unbiased variance correction.
    Constant quantities produce exactly zero variance (two-pass centering).
    """
    mean = weights @ vals
    constant = np.ptp(vals, axis=0) == 0.0
    mean = np.where(constant, vals[0], mean)
    centered = vals - mean
    var = norm * (weights @ centered**2)
    var[constant] = 0.0
    std = np.sqrt(np.maximum(var, 0.0))
    est = MomentEstimate(
        mean=_restore(mean, shape),
        std=_restore(std, shape),
        method=method,
        n_evals=len(vals),
        stderr=stderr if stderr is None else _restore(stderr, shape),
    )
    if grads is not None:
        d = grads.shape[2]
        mean_grad = np.einsum("q,qkd->kd", weights, grads)
        var_grad = 2.0 * norm * np.einsum("q,qk,qkd->kd", weights, centered, grads)
        safe = np.where(std > 0.0, std, 1.0)
        std_grad = np.where((std > 0.0)[:, None], var_grad / (2.0 * safe[:, None]), 0.0)
        est.mean_grad = mean_grad.reshape(shape + (d,))
        est.std_grad = std_grad.reshape(shape + (d,))
    return est


def sq_moments(fun: Callable, box: UniformBox, n_nodes: int = 5,
               with_grad: bool = False) -> MomentEstimate:
    """Moments by tensor Gauss-Legendre quadrature (n_nodes per coordinate).

    fun(p) returns a scalar or vector; with with_grad=True it must return
    (value, gradient) and the moment derivatives w.r.t. the box center are
    computed by differentiating under the quadrature sign.
    """
    nodes, weights = _gauss_rule(box, n_nodes)
    shape, vals, grads = _eval_batch(fun, nodes, with_grad)
    return _weighted_moments(shape, vals, grads, weights, 1.0, "sq")


def mc_moments(fun: Callable, box: UniformBox, n_samples: int = 5000,
               seed: int = 0, with_grad: bool = False) -> MomentEstimate:
    """Moments by Monte Carlo with a Philox generator (ddof=1 variance).

    The same seed reproduces the same offsets at any center, so repeated
    calls along an optimization path use common random numbers.
    """
    if n_samples < 2:
        raise ValueError(f"need at least two samples, got {n_samples}")
    rng = np.random.Generator(np.random.Philox(seed))
    nodes = box.sample(n_samples, rng)
    shape, vals, grads = _eval_batch(fun, nodes, with_grad)
    weights = np.full(n_samples, 1.0 / n_samples)
    norm = n_samples / (n_samples - 1.0)
    est = _weighted_moments(shape, vals, grads, weights, norm, "mc")
    est.stderr = _restore(
        np.atleast_1d(np.asarray(est.std)) / np.sqrt(n_samples), shape
    )
    return est


def linearized_moments(value: Scalar, grad: NDArray, box: UniformBox) -> MomentEstimate:
    """First-order moments: mean = value, std = ||std[xi] o grad||_2.

    value may be scalar with grad of shape (dim,), or shape (k,) with grad
    of shape (k, dim); rows are treated independently.
    """
    g = np.asarray(grad, dtype=float)
    v = np.asarray(value, dtype=float)
    shape = v.shape
    scaled = g.reshape(v.size, box.dim) * box.std
    std = np.sqrt(np.sum(scaled**2, axis=1))
    return MomentEstimate(
        mean=_restore(v.reshape(-1), shape),
        std=_restore(std, shape),
        method="lin",
        n_evals=1,
    )


def sobol_first_order(fun: Callable, box: UniformBox, n_outer: int = 9,
                      n_inner: int = 5, n_total: int = 9) -> NDArray:
    """First-order Sobol indices S_i = Var(E[q | p_i]) / Var(q).

    The total variance uses an n_total-point tensor rule; each conditional
    expectation fixes coordinate i at one of n_outer Gauss points and
    integrates the remaining coordinates with n_inner points each.  Raises
    ZeroVariance when the total variance vanishes (q constant on the box).
    """
    total = sq_moments(fun, box, n_nodes=n_total)
    if np.ndim(total.mean) != 0:
        raise ValueError("Sobol indices are defined for scalar quantities")
    var_total = float(total.std) ** 2
    if var_total <= max(1e-30, 1e-14 * total.mean**2):
        raise ZeroVariance(
            f"total variance {var_total!r} too small to decompose at "
            f"center {box.center}"
        )
    indices = np.zeros(box.dim)
    for i in range(box.dim):
        if box.half_width[i] == 0.0:
            continue
        x, w = np.polynomial.legendre.leggauss(n_outer)
        outer_nodes = box.center[i] + box.half_width[i] * x
        outer_w = 0.5 * w
        cond = np.empty(n_outer)
        for j, xi in enumerate(outer_nodes):
            center = box.center.copy()
            center[i] = xi
            half = box.half_width.copy()
            half[i] = 0.0
            inner = sq_moments(fun, UniformBox(center, half), n_nodes=n_inner)
            cond[j] = inner.mean
        cond_mean = outer_w @ cond
        indices[i] = (outer_w @ (cond - cond_mean) ** 2) / var_total
    return indices
