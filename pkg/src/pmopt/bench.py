"""Magnet sizing benchmark: constraint rows, solve helpers, scatter audits.

The design task: choose magnet width, height and mounting depth to
minimize magnet cross-section area p1 * p2 subject to six linear
manufacturability rows and one field row (the open-circuit EMF must not
fall below its target).  EmfBackend provides the EMF value and its
design derivatives either from the full finite-element model or from a
trained reduced-basis dictionary, behind one interface, so every
formulation and solver runs unchanged on both.

failure_rate draws manufacturing scatter around a finished design and
counts EMF misses; delta_sweep re-solves one formulation over a list of
scatter amplitudes, warm-starting each solve from the previous optimum.
"""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from . import sens, uq
from .errors import InfeasibleParameter
from .fem import AffineModel
from .opt import (
    MATCHED_STD_WEIGHT,
    DesignProblem,
    Formulation,
    LinearRow,
    OutputMarginRow,
    ProductObjective,
    PsoOptions,
    solve_pso,
    solve_sqp,
)
from .rb import Dictionary

#: std signs of the six linear rows plus the EMF margin row in the
#: mean-variance robust counterpart.
DEFAULT_STD_SIGNS = (1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0)

DEFAULT_SCATTER = 0.2


class EmfBackend:
    """EMF value / gradient / Hessian with memoization and eval counting.

    Wraps either a full model (direct sparse solves plus adjoint
    sensitivities) or a reduced dictionary (sub-box lookup plus dense
    reduced solves).  Values, gradients and Hessians are cached per
    design point; the factorization and sensitivity state needed to
    upgrade a cached value to derivatives is kept for the most recent
    point only, so the cache stays small even on the full model.

    n_evaluations counts distinct design points solved (cache misses).
    """

    def __init__(self, model: Optional[AffineModel] = None,
                 dictionary: Optional[Dictionary] = None,
                 cache_size: int = 256):
        if (model is None) == (dictionary is None):
            raise ValueError("pass exactly one of model, dictionary")
        self.model = model
        self.dictionary = dictionary
        if model is not None:
            self.tri = model.tri
            self.emf_target = model.emf_target
        else:
            first = next(iter(dictionary.models.values()))
            self.tri = first.tri
            self.emf_target = first.emf_target
        spec = self.tri.spec
        self.lower = np.asarray(spec.p_lower, dtype=float)
        self.upper = np.asarray(spec.p_upper, dtype=float)
        self.p_ref = np.asarray(spec.p_ref, dtype=float)
        self.cache_size = int(cache_size)
        self.n_evaluations = 0
        self._cache: OrderedDict = OrderedDict()
        self._hot = None        # (key, solution, bundle) of the latest point

    @property
    def reduced(self) -> bool:
        return self.dictionary is not None

    @property
    def n_solves(self) -> int:
        """Linear-system solve count of the wrapped model."""
        if self.reduced:
            return self.dictionary.reduced_solves
        return self.model.full_solves

    def _check(self, p) -> NDArray:
        p = np.asarray(p, dtype=float).reshape(3)
        if np.any(p < self.lower - 1e-9) or np.any(p > self.upper + 1e-9):
            raise InfeasibleParameter(
                f"design point {p} outside the box {self.lower}..{self.upper}"
            )
        return p

    def _entry(self, p, order: int) -> dict:
        p = self._check(p)
        key = p.tobytes()
        entry = self._cache.get(key)
        if entry is None:
            entry = {}
            self._cache[key] = entry
            if len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        if "value" not in entry:
            self.n_evaluations += 1
            if self.reduced:
                rm = self.dictionary.lookup(p)
                rsol = rm.solve(p)
                entry["value"] = rm.emf(rsol)
                self._hot = (key, (rm, rsol), None)
            else:
                sol = self.model.solve(p)
                entry["value"] = self.model.emf(sol)
                self._hot = (key, sol, None)
        if order >= 1 and "grad" not in entry:
            sol = self._solution(p, key)
            if self.reduced:
                rm, rsol = sol
                bundle = rm.first_order(p, rsol)
            else:
                bundle = sens.first_order(self.model, p, sol=sol)
            entry["grad"] = bundle.grad_emf
            self._hot = (key, sol, bundle)
        if order >= 2 and "hess" not in entry:
            sol = self._solution(p, key)
            bundle = self._hot[2] if self._hot[0] == key else None
            if self.reduced:
                rm, rsol = sol
                bundle = rm.second_order(p, rsol, bundle)
            else:
                bundle = sens.second_order(self.model, p, sol=sol, bundle=bundle)
            entry["hess"] = bundle.hess_emf
            self._hot = (key, sol, bundle)
        return entry

    def _solution(self, p, key):
        if self._hot is not None and self._hot[0] == key:
            return self._hot[1]
        if self.reduced:
            rm = self.dictionary.lookup(p)
            sol = (rm, rm.solve(p))
        else:
            sol = self.model.solve(p)
        self._hot = (key, sol, None)
        return sol

    def value(self, p) -> float:
        return self._entry(p, 0)["value"]

    def grad(self, p) -> NDArray:
        return self._entry(p, 1)["grad"]

    def hess(self, p) -> NDArray:
        return self._entry(p, 2)["hess"]


def make_design_problem(backend: EmfBackend) -> DesignProblem:
    """Area objective, six linear rows and the EMF margin row."""
    rows = [
        LinearRow([-1.0, 0.0, 0.0], 1.0),     # width at least 1
        LinearRow([0.0, -1.0, 0.0], 1.0),     # height at least 1
        LinearRow([0.0, 0.0, -1.0], 5.0),     # depth at least 5
        LinearRow([0.0, 0.0, 1.0], -14.0),    # depth at most 14
        LinearRow([0.0, 1.0, 1.0], -15.0),    # height + depth at most 15
        LinearRow([3.0, 0.0, -2.0], -50.0),   # width bounded by depth
        OutputMarginRow(backend, backend.emf_target),
    ]
    return DesignProblem(
        objective=ProductObjective(0, 1, dim=3),
        rows=rows,
        lower=backend.lower,
        upper=backend.upper,
        std_signs=np.array(DEFAULT_STD_SIGNS),
    )


@dataclass
class DesignResult:
    """One formulation solved by one method, with nominal row audit."""

    kind: str
    method: str
    delta: NDArray
    lam: float
    p: NDArray
    objective: float
    area: float
    rows: NDArray               # nominal row values at the optimum
    converged: bool
    stop_reason: str
    n_iter: int
    kkt: Optional[float]
    n_evaluations: int          # new design points solved by the backend
    wall_time: float
    trace: list = field(default_factory=list)


def solve_design(backend: EmfBackend, kind: str, delta=DEFAULT_SCATTER,
                 lam: float = MATCHED_STD_WEIGHT, method: str = "sqp",
                 p0=None, tol: float = 1e-8, max_iter: int = 100,
                 uq_method: str = "sq", uq_nodes: int = 5,
                 mc_samples: int = 5000, mc_seed: int = 0,
                 pso_seed: int = 0,
                 pso_options: Optional[PsoOptions] = None) -> DesignResult:
    """Solve one robust (or nominal) counterpart of the sizing problem."""
    if method not in ("sqp", "pso"):
        raise ValueError(f"unknown method {method!r}")
    problem = make_design_problem(backend)
    form = Formulation(problem, kind, delta, lam=lam, uq_method=uq_method,
                       uq_nodes=uq_nodes, mc_samples=mc_samples,
                       mc_seed=mc_seed)
    p0 = backend.p_ref if p0 is None else np.asarray(p0, dtype=float)
    n0 = backend.n_evaluations
    t0 = time.perf_counter()
    if method == "sqp":
        res = solve_sqp(form, form.pack(p0), tol=tol, max_iter=max_iter)
        p_opt = res.p
        objective = res.f
        converged = res.converged
        stop_reason = "kkt" if res.converged else "iteration limit"
        n_iter, kkt, trace = res.n_iter, res.kkt, res.trace
    else:
        res = solve_pso(form.value, form.violations, form.lower, form.upper,
                        seed=pso_seed, options=pso_options or PsoOptions())
        p_opt = res.p
        objective = res.f
        converged = res.violation <= 1e-6
        stop_reason = res.stop_reason
        n_iter, kkt, trace = res.n_iter, None, res.trace
    wall = time.perf_counter() - t0
    row_vals = np.array([r.value(p_opt) for r in problem.rows])
    return DesignResult(
        kind=kind, method=method, delta=form.delta.copy(), lam=lam,
        p=np.asarray(p_opt, dtype=float), objective=float(objective),
        area=float(p_opt[0] * p_opt[1]), rows=row_vals, converged=converged,
        stop_reason=stop_reason, n_iter=n_iter, kkt=kkt,
        n_evaluations=backend.n_evaluations - n0, wall_time=wall, trace=trace,
    )


@dataclass
class ScatterAudit:
    """EMF miss statistics under uniform manufacturing scatter."""

    n_samples: int
    n_failures: int
    rate: float
    emf_min: float
    emf_mean: float
    emf_target: float
    delta: NDArray
    seed: int


def failure_rate(backend: EmfBackend, p_star, delta=DEFAULT_SCATTER,
                 n_samples: int = 10000, seed: int = 0) -> ScatterAudit:
    """Sample scatter around a design and count EMF target misses."""
    p_star = np.asarray(p_star, dtype=float).reshape(3)
    box = uq.UniformBox(p_star, delta)
    rng = np.random.Generator(np.random.Philox(seed))
    samples = box.sample(n_samples, rng)
    vals = np.array([backend.value(s) for s in samples])
    misses = vals < backend.emf_target
    return ScatterAudit(
        n_samples=int(n_samples), n_failures=int(misses.sum()),
        rate=float(misses.mean()), emf_min=float(vals.min()),
        emf_mean=float(vals.mean()), emf_target=backend.emf_target,
        delta=box.half_width.copy(), seed=int(seed),
    )


def delta_sweep(backend: EmfBackend, kind: str, deltas: Sequence[float],
                **kwargs) -> list[DesignResult]:
    """Solve one formulation for each scatter amplitude, warm-started."""
    results = []
    p0 = kwargs.pop("p0", None)
    for d in deltas:
        res = solve_design(backend, kind, delta=d, p0=p0, **kwargs)
        results.append(res)
        p0 = res.p
    return results


def counterpart_gap(backend: EmfBackend, delta=DEFAULT_SCATTER,
                    lam: float = MATCHED_STD_WEIGHT,
                    tol: float = 1e-8, **kwargs) -> dict:
    """Distance between the 2-norm worst-case and the linearized
    mean-std optima at matched weight (they coincide in exact arithmetic).
    """
    wc2 = solve_design(backend, "wc2", delta=delta, tol=tol, **kwargs)
    lin = solve_design(backend, "uq_lin", delta=delta, lam=lam, tol=tol,
                       **kwargs)
    denom = max(abs(wc2.objective), abs(lin.objective), 1e-30)
    return {
        "wc2": wc2,
        "uq_lin": lin,
        "design_gap": float(np.linalg.norm(wc2.p - lin.p, np.inf)),
        "objective_gap_rel": float(abs(wc2.objective - lin.objective) / denom),
    }
