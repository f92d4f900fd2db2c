"""First- and second-order parameter sensitivities of the field and the EMF.

Differentiating K(p) u(p) = rhs(p) gives, per parameter i and pair (i, j),

    K s_i  = d_i rhs - (d_i K) u
    K s_ij = d_ij rhs - (d_ij K) u - (d_i K) s_j - (d_j K) s_i

with all derivative operators available analytically from the affine weight
polynomials.  Every sensitivity solve reuses the factorization of K(p) from
the primal solve.  EMF derivatives follow from linearity of the output:
grad E0_i = q_E^T s_i and hess E0_ij = q_E^T s_ij.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .fem import AffineModel, FieldSolution
from .geom import weight_derivatives


@dataclass
class SensitivityBundle:
    """Field sensitivities and EMF derivatives at one parameter point."""

    p: NDArray
    s: NDArray                      # (3, n_free) first-order field sensitivities
    grad_emf: NDArray               # (3,)
    s2: Optional[NDArray] = None    # (3, 3, n_free), symmetric in (i, j)
    hess_emf: Optional[NDArray] = None   # (3, 3)


def first_order(model: AffineModel, p, sol: Optional[FieldSolution] = None
                ) -> SensitivityBundle:
    """Solve the three first-order sensitivity systems at p."""
    if sol is None:
        sol = model.solve(p)
    wd = weight_derivatives(model.tri, sol.p)
    rhs = np.empty((3, model.n_free))
    for i in range(3):
        rhs[i] = model.load_derivative(wd, i) - model.stiffness_derivative(wd, i) @ sol.u
    s = sol.lu.solve(rhs.T).T
    return SensitivityBundle(p=sol.p, s=s, grad_emf=s @ model.q_emf)


def second_order(model: AffineModel, p, sol: Optional[FieldSolution] = None,
                 bundle: Optional[SensitivityBundle] = None) -> SensitivityBundle:
    """Extend a sensitivity bundle with the six second-order solves.

    The (i, j) and (j, i) systems coincide; each unique pair is solved once
    and mirrored.
    """
    if sol is None:
        sol = model.solve(p)
    if bundle is None:
        bundle = first_order(model, p, sol)
    wd = weight_derivatives(model.tri, sol.p)
    dk = [model.stiffness_derivative(wd, i) for i in range(3)]

    pairs = [(i, j) for i in range(3) for j in range(i, 3)]
    rhs = np.empty((len(pairs), model.n_free))
    for k, (i, j) in enumerate(pairs):
        rhs[k] = (
            model.load_second_derivative(wd, i, j)
            - model.stiffness_second_derivative(wd, i, j) @ sol.u
            - dk[i] @ bundle.s[j]
            - dk[j] @ bundle.s[i]
        )
    sols = sol.lu.solve(rhs.T).T
    s2 = np.empty((3, 3, model.n_free))
    for k, (i, j) in enumerate(pairs):
        s2[i, j] = sols[k]
        s2[j, i] = sols[k]
    bundle.s2 = s2
    bundle.hess_emf = s2 @ model.q_emf
    return bundle
