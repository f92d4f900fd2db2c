"""Design formulations under parameter scatter and two NLP solvers.

Six inequality-constrained formulations of the same underlying design
problem (minimize an objective subject to rows h_b(p) <= 0 on a box):

* nominal      - rows evaluated at the design point only;
* wc1          - first-order worst case over the scatter box measured in
                 the max norm, giving 1-norm gradient margins; solved as a
                 smooth program with one slack vector per row;
* wc2          - first-order worst case over the scatter ellipsoid,
                 giving 2-norm gradient margins;
* uq_nominal   - rows replaced by their means under uniform scatter;
* uq_robust    - rows replaced by mean +/- lambda * std (sign per row),
                 objective by mean + lambda * std;
* uq_lin       - like uq_robust but with linearized moments, which turns
                 each margin into lambda * ||std[xi] o grad h||_2.

With lambda = sqrt(3) (MATCHED_STD_WEIGHT) the uq_lin margins coincide
with the wc2 margins, because the uniform scatter std is delta/sqrt(3):
the two formulations are then the same program arrived at by different
routes, and their optima must agree.

Solvers: a damped-BFGS SQP with an l1 merit line search (QP subproblems
via cvxopt, with an elastic relaxation fallback), and a global-best
particle swarm with box projection and three stopping rules.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import cvxopt
import cvxopt.solvers
import numpy as np
from numpy.typing import NDArray

from . import uq
from .errors import InfeasibleParameter, QPFailure

FORMULATIONS = ("nominal", "wc1", "wc2", "uq_nominal", "uq_robust", "uq_lin")

#: Weight for which uq_lin reproduces the wc2 margins exactly: the scatter
#: box and the worst-case set share their half-widths, and a uniform
#: variable has std = half_width / sqrt(3).
MATCHED_STD_WEIGHT = float(np.sqrt(3.0))

cvxopt.solvers.options["show_progress"] = False
cvxopt.solvers.options["abstol"] = 1e-11
cvxopt.solvers.options["reltol"] = 1e-10
cvxopt.solvers.options["feastol"] = 1e-9


# -- design problem -----------------------------------------------------------

class LinearRow:
    """Constraint row a^T p + b <= 0."""

    def __init__(self, a, b: float):
        self.a = np.asarray(a, dtype=float).reshape(-1)
        self.b = float(b)

    def value(self, p) -> float:
        return float(self.a @ p + self.b)

    def grad(self, p) -> NDArray:
        return self.a.copy()

    def hess(self, p) -> NDArray:
        return np.zeros((self.a.size, self.a.size))


class ProductObjective:
    """Objective p_i * p_j (magnet cross-section area for (0, 1))."""

    def __init__(self, i: int = 0, j: int = 1, dim: int = 3):
        self.i, self.j, self.dim = i, j, dim

    def value(self, p) -> float:
        return float(p[self.i] * p[self.j])

    def grad(self, p) -> NDArray:
        g = np.zeros(self.dim)
        g[self.i] += p[self.j]
        g[self.j] += p[self.i]
        return g

    def hess(self, p) -> NDArray:
        h = np.zeros((self.dim, self.dim))
        h[self.i, self.j] += 1.0
        h[self.j, self.i] += 1.0
        return h


class OutputMarginRow:
    """Constraint row target - E0(p) <= 0 for a backend with derivatives."""

    def __init__(self, backend, target: float):
        self.backend = backend
        self.target = float(target)

    def value(self, p) -> float:
        return self.target - self.backend.value(p)

    def grad(self, p) -> NDArray:
        return -self.backend.grad(p)

    def hess(self, p) -> NDArray:
        return -self.backend.hess(p)


@dataclass
class DesignProblem:
    """Objective, inequality rows h(p) <= 0, box bounds and std signs.

    std_signs holds +1/-1 per row: the sign with which a row's standard
    deviation enters its mean-variance robust counterpart.
    """

    objective: object
    rows: list
    lower: NDArray
    upper: NDArray
    std_signs: NDArray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        self.std_signs = np.asarray(self.std_signs, dtype=float).reshape(-1)
        if len(self.std_signs) != len(self.rows):
            raise ValueError("need one std sign per row")
        if np.any(np.abs(self.std_signs) != 1.0):
            raise ValueError(f"std signs must be +-1: {self.std_signs}")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def n_rows(self) -> int:
        return len(self.rows)


def _scaled_norm_grad(g: NDArray, h: NDArray, scale: NDArray) -> tuple[float, NDArray]:
    """Value and design gradient of p -> ||scale o grad h(p)||_2."""
    sg = scale * g
    val = float(np.linalg.norm(sg))
    if val == 0.0:
        return 0.0, np.zeros_like(g)
    return val, h @ (scale * sg) / val


class Formulation:
    """One robust (or nominal) counterpart of a design problem.

    Exposes the smooth NLP interface consumed by solve_sqp (objective /
    constraints with gradients, box bounds, variable packing) and the
    derivative-free interface consumed by solve_pso (value / violations).
    The wc1 counterpart introduces one slack triple per row plus one for
    the objective; all other kinds keep the design variables only.
    """

    def __init__(self, problem: DesignProblem, kind: str, delta,
                 lam: float = MATCHED_STD_WEIGHT, uq_method: str = "sq",
                 uq_nodes: int = 5, mc_samples: int = 5000, mc_seed: int = 0):
        if kind not in FORMULATIONS:
            raise ValueError(f"unknown formulation {kind!r}; pick from {FORMULATIONS}")
        if uq_method not in ("sq", "mc"):
            raise ValueError(f"unknown moment method {uq_method!r}")
        self.problem = problem
        self.kind = kind
        self.delta = np.broadcast_to(
            np.asarray(delta, dtype=float).ravel(), (problem.dim,)
        ).copy()
        if np.any(self.delta < 0.0):
            raise ValueError(f"negative scatter half-width {self.delta}")
        self.lam = float(lam)
        self.uq_method = uq_method
        self.uq_nodes = int(uq_nodes)
        self.mc_samples = int(mc_samples)
        self.mc_seed = int(mc_seed)
        self.n_evaluations = 0
        self._cache: OrderedDict = OrderedDict()

        if kind == "nominal":
            self.lower = problem.lower.copy()
            self.upper = problem.upper.copy()
        else:
            # scatter neighborhoods of feasible designs must stay inside
            # the validated parameter box
            self.lower = problem.lower + self.delta
            self.upper = problem.upper - self.delta
            if np.any(self.lower >= self.upper):
                raise InfeasibleParameter(
                    f"scatter half-width {self.delta} leaves an empty design box"
                )

    # -- shared evaluation caches ----------------------------------------------

    def _cached(self, tag: str, p: NDArray, build: Callable):
        key = (tag, np.asarray(p, dtype=float).tobytes())
        if key in self._cache:
            return self._cache[key]
        out = build()
        self._cache[key] = out
        if len(self._cache) > 16:
            self._cache.popitem(last=False)
        return out

    def _eval(self, p) -> tuple[NDArray, NDArray]:
        """Values and gradients of [objective, rows] at p."""
        def build():
            self.n_evaluations += 1
            funcs = [self.problem.objective] + list(self.problem.rows)
            vals = np.array([f.value(p) for f in funcs])
            grads = np.stack([f.grad(p) for f in funcs])
            return vals, grads
        return self._cached("vg", p, build)

    def _eval_hess(self, p) -> tuple[NDArray, NDArray, NDArray]:
        def build():
            vals, grads = self._eval(p)
            funcs = [self.problem.objective] + list(self.problem.rows)
            hess = np.stack([f.hess(p) for f in funcs])
            return vals, grads, hess
        return self._cached("vgh", p, build)

    def _moments(self, p, with_grad: bool) -> uq.MomentEstimate:
        def build():
            box = uq.UniformBox(np.asarray(p, dtype=float), self.delta)
            if with_grad:
                fun = lambda q: self._eval(q)
            else:
                fun = lambda q: self._eval(q)[0]
            if self.uq_method == "sq":
                return uq.sq_moments(fun, box, n_nodes=self.uq_nodes,
                                     with_grad=with_grad)
            return uq.mc_moments(fun, box, n_samples=self.mc_samples,
                                 seed=self.mc_seed, with_grad=with_grad)
        return self._cached(f"mom{int(with_grad)}", p, build)

    # -- smooth NLP interface ---------------------------------------------------

    @property
    def n_vars(self) -> int:
        if self.kind == "wc1":
            return self.problem.dim + self.problem.dim * (self.problem.n_rows + 1)
        return self.problem.dim

    @property
    def bounds(self) -> tuple[NDArray, NDArray]:
        if self.kind == "wc1":
            n_slack = self.problem.dim * (self.problem.n_rows + 1)
            return (
                np.concatenate([self.lower, np.zeros(n_slack)]),
                np.concatenate([self.upper, np.full(n_slack, np.inf)]),
            )
        return self.lower.copy(), self.upper.copy()

    def design(self, x: NDArray) -> NDArray:
        return np.asarray(x, dtype=float)[: self.problem.dim]

    def pack(self, p0) -> NDArray:
        """Initial NLP point from a design point (slacks start feasible)."""
        p0 = np.clip(np.asarray(p0, dtype=float).reshape(-1), self.lower, self.upper)
        if self.kind != "wc1":
            return p0
        _, grads = self._eval(p0)
        slack = np.abs(self.delta * grads).ravel()
        return np.concatenate([p0, slack])

    def objective(self, x) -> tuple[float, NDArray]:
        p = self.design(x)
        dim = self.problem.dim
        if self.kind == "nominal":
            vals, grads = self._eval(p)
            return vals[0], grads[0]
        if self.kind == "wc1":
            vals, grads = self._eval(p)
            xi0 = np.asarray(x, dtype=float)[dim: 2 * dim]
            g = np.zeros(self.n_vars)
            g[:dim] = grads[0]
            g[dim: 2 * dim] = 1.0
            return vals[0] + float(xi0.sum()), g
        if self.kind == "wc2":
            vals, grads, hess = self._eval_hess(p)
            pen, pen_g = _scaled_norm_grad(grads[0], hess[0], self.delta)
            return vals[0] + pen, grads[0] + pen_g
        if self.kind == "uq_lin":
            vals, grads, hess = self._eval_hess(p)
            est = uq.linearized_moments(vals, grads, uq.UniformBox(p, self.delta))
            _, std_g = _scaled_norm_grad(grads[0], hess[0],
                                         self.delta / np.sqrt(3.0))
            return float(est.mean[0] + self.lam * est.std[0]), \
                grads[0] + self.lam * std_g
        est = self._moments(p, with_grad=True)
        if self.kind == "uq_nominal":
            return float(est.mean[0]), est.mean_grad[0]
        # uq_robust
        return float(est.mean[0] + self.lam * est.std[0]), \
            est.mean_grad[0] + self.lam * est.std_grad[0]

    def constraints(self, x) -> tuple[NDArray, NDArray]:
        p = self.design(x)
        dim, m = self.problem.dim, self.problem.n_rows
        if self.kind == "nominal":
            vals, grads = self._eval(p)
            return vals[1:], grads[1:]
        if self.kind == "wc1":
            return self._wc1_constraints(x)
        if self.kind == "wc2":
            vals, grads, hess = self._eval_hess(p)
            c = np.empty(m)
            jac = np.empty((m, dim))
            for b in range(m):
                pen, pen_g = _scaled_norm_grad(grads[1 + b], hess[1 + b], self.delta)
                c[b] = vals[1 + b] + pen
                jac[b] = grads[1 + b] + pen_g
            return c, jac
        if self.kind == "uq_lin":
            vals, grads, hess = self._eval_hess(p)
            est = uq.linearized_moments(vals, grads, uq.UniformBox(p, self.delta))
            c = np.empty(m)
            jac = np.empty((m, dim))
            for b in range(m):
                _, std_g = _scaled_norm_grad(grads[1 + b], hess[1 + b],
                                             self.delta / np.sqrt(3.0))
                c[b] = float(est.mean[1 + b] + self.lam * est.std[1 + b])
                jac[b] = grads[1 + b] + self.lam * std_g
            return c, jac
        est = self._moments(p, with_grad=True)
        if self.kind == "uq_nominal":
            return est.mean[1:].copy(), est.mean_grad[1:].copy()
        signs = self.problem.std_signs
        c = est.mean[1:] + signs * self.lam * est.std[1:]
        jac = est.mean_grad[1:] + signs[:, None] * self.lam * est.std_grad[1:]
        return c, jac

    def _wc1_constraints(self, x) -> tuple[NDArray, NDArray]:
        dim, m = self.problem.dim, self.problem.n_rows
        x = np.asarray(x, dtype=float)
        p = x[:dim]
        xi = x[dim:].reshape(m + 1, dim)
        vals, grads, hess = self._eval_hess(p)
        n = self.n_vars
        n_c = m + 2 * dim * (m + 1)
        c = np.zeros(n_c)
        jac = np.zeros((n_c, n))
        # margin rows: h_b(p) + 1^T xi_b <= 0
        for b in range(m):
            c[b] = vals[1 + b] + xi[1 + b].sum()
            jac[b, :dim] = grads[1 + b]
            jac[b, dim + (1 + b) * dim: dim + (2 + b) * dim] = 1.0
        # slack envelopes: +-(delta_i * d_i h_b(p)) - xi_b_i <= 0
        r = m
        for b in range(m + 1):
            for i in range(dim):
                for sign in (1.0, -1.0):
                    c[r] = sign * self.delta[i] * grads[b, i] - xi[b, i]
                    jac[r, :dim] = sign * self.delta[i] * hess[b, i]
                    jac[r, dim + b * dim + i] = -1.0
                    r += 1
        return c, jac

    # -- derivative-free interface ----------------------------------------------

    def value(self, p) -> float:
        """Objective of the counterpart at a design point."""
        if self.kind == "nominal":
            return self._eval(p)[0][0]
        if self.kind == "wc1":
            vals, grads = self._eval(p)
            return float(vals[0] + np.abs(self.delta * grads[0]).sum())
        if self.kind == "wc2":
            vals, grads = self._eval(p)
            return float(vals[0] + np.linalg.norm(self.delta * grads[0]))
        if self.kind == "uq_lin":
            vals, grads = self._eval(p)
            est = uq.linearized_moments(vals, grads, uq.UniformBox(p, self.delta))
            return float(est.mean[0] + self.lam * est.std[0])
        est = self._moments(p, with_grad=False)
        if self.kind == "uq_nominal":
            return float(est.mean[0])
        return float(est.mean[0] + self.lam * est.std[0])

    def violations(self, p) -> NDArray:
        """Constraint rows of the counterpart at a design point (<= 0 ok)."""
        m = self.problem.n_rows
        if self.kind == "nominal":
            return self._eval(p)[0][1:]
        if self.kind == "wc1":
            vals, grads = self._eval(p)
            return vals[1:] + np.abs(self.delta * grads[1:]).sum(axis=1)
        if self.kind == "wc2":
            vals, grads = self._eval(p)
            return vals[1:] + np.linalg.norm(self.delta * grads[1:], axis=1)
        if self.kind == "uq_lin":
            vals, grads = self._eval(p)
            est = uq.linearized_moments(vals, grads, uq.UniformBox(p, self.delta))
            return np.asarray(est.mean[1:] + self.lam * est.std[1:])
        est = self._moments(p, with_grad=False)
        if self.kind == "uq_nominal":
            return np.asarray(est.mean[1:])
        return np.asarray(est.mean[1:]
                          + self.problem.std_signs * self.lam * est.std[1:])


# -- SQP ------------------------------------------------------------------------

@dataclass
class SqpResult:
    x: NDArray
    p: NDArray
    f: float
    constraints: NDArray
    converged: bool
    n_iter: int
    kkt: float
    multipliers: NDArray
    trace: list = field(default_factory=list)


def _qp_step(b_mat, g, c, jac, d_lo, d_hi) -> tuple[NDArray, NDArray]:
    """Solve min 1/2 d^T B d + g^T d, J d <= -c, d_lo <= d <= d_hi.

    Falls back to an elastic relaxation (penalized constraint slacks) if
    the QP is reported infeasible; raises QPFailure if that fails too.
    """
    n = len(g)
    m = len(c)
    eye = np.eye(n)
    g_rows = np.vstack([jac, eye, -eye])
    h = np.concatenate([-c, d_hi, -d_lo])
    finite = np.isfinite(h)
    try:
        sol = cvxopt.solvers.qp(
            cvxopt.matrix(b_mat), cvxopt.matrix(g),
            cvxopt.matrix(g_rows[finite]), cvxopt.matrix(h[finite]),
        )
        if sol["status"] == "optimal":
            z = np.zeros(np.count_nonzero(finite))
            z[:] = np.array(sol["z"]).ravel()
            mult = np.zeros(len(h))
            mult[finite] = z
            return np.array(sol["x"]).ravel(), mult[:m]
    except (ValueError, ZeroDivisionError, ArithmeticError):
        pass

    # elastic relaxation: J d - t <= -c with t >= 0 strongly penalized
    penalty = 1e6 * (1.0 + float(np.linalg.norm(g)))
    p_ext = np.zeros((n + m, n + m))
    p_ext[:n, :n] = b_mat
    p_ext[n:, n:] = 1e-8 * np.eye(m)
    q_ext = np.concatenate([g, np.full(m, penalty)])
    g_ext = np.zeros((len(g_rows) + m, n + m))
    g_ext[: len(jac), :n] = jac
    g_ext[: len(jac), n:] = -np.eye(m)
    g_ext[len(jac): len(g_rows), :n] = g_rows[m:]
    g_ext[len(g_rows):, n:] = -np.eye(m)
    h_ext = np.concatenate([h, np.zeros(m)])
    finite = np.isfinite(h_ext)
    try:
        sol = cvxopt.solvers.qp(
            cvxopt.matrix(p_ext), cvxopt.matrix(q_ext),
            cvxopt.matrix(g_ext[finite]), cvxopt.matrix(h_ext[finite]),
            # rescue step: the penalty dwarfs the step objective, so the
            # certified duality gap cannot reach the tight main-QP levels
            options={"show_progress": False, "abstol": 1e-5,
                     "reltol": 1e-4, "feastol": 1e-7},
        )
    except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
        raise QPFailure(f"elastic QP subproblem failed: {exc}") from exc
    x_el = np.array(sol["x"]).ravel()
    # an uncertified iterate is still a usable descent direction: the merit
    # line search rejects it if it is not
    if sol["status"] not in ("optimal", "unknown") or not np.all(np.isfinite(x_el)):
        raise QPFailure(f"elastic QP subproblem ended with status {sol['status']}")
    z = np.zeros(len(h_ext))
    z[finite] = np.array(sol["z"]).ravel()
    return x_el[:n], z[:m]


def solve_sqp(nlp, x0, tol: float = 1e-8, max_iter: int = 100) -> SqpResult:
    """Damped-BFGS SQP with an l1 merit line search.

    nlp needs bounds, objective(x) -> (f, g) and constraints(x) -> (c, J).
    Convergence is declared when both the QP step and the constraint
    violation drop below tol.
    """
    lb, ub = nlp.bounds
    x = np.clip(np.asarray(x0, dtype=float).ravel(), lb, ub)
    f, g = nlp.objective(x)
    c, jac = nlp.constraints(x)
    m = len(c)
    n = len(x)
    b_mat = np.eye(n) * max(1.0, float(np.linalg.norm(g)))
    mu = np.zeros(m)
    rho = 1.0
    trace = []
    converged = False
    kkt = np.inf
    it = 0
    no_progress = 0
    for it in range(1, max_iter + 1):
        d, mu = _qp_step(b_mat, g, c, jac, lb - x, ub - x)
        viol = float(np.clip(c, 0.0, None).max()) if m else 0.0
        step = float(np.linalg.norm(d, np.inf))
        kkt = max(step, viol)
        trace.append({"iter": it, "objective": f, "violation": viol,
                      "step": step, "kkt": kkt})
        if kkt <= tol:
            converged = True
            break

        mu_norm = float(np.linalg.norm(mu, np.inf)) if m else 0.0
        rho = max(rho, 2.0 * mu_norm + 1.0)
        phi0 = f + rho * float(np.clip(c, 0.0, None).sum())
        dphi = float(g @ d) - rho * float(np.clip(c, 0.0, None).sum())
        alpha = 1.0
        x_new = x
        while True:
            x_try = np.clip(x + alpha * d, lb, ub)
            f_try, g_try = nlp.objective(x_try)
            c_try, jac_try = nlp.constraints(x_try)
            phi = f_try + rho * float(np.clip(c_try, 0.0, None).sum())
            if phi <= phi0 + 1e-4 * alpha * dphi or alpha < 1e-12:
                x_new = x_try
                break
            alpha *= 0.5
        if alpha < 1e-12:
            break                                    # merit stall: give up
        if phi0 - phi <= 1e-15 * (1.0 + abs(phi0)):
            no_progress += 1
            if no_progress >= 5:                     # at merit precision floor
                break
        else:
            no_progress = 0

        y = (g_try + jac_try.T @ mu) - (g + jac.T @ mu)
        s = x_new - x
        bs = b_mat @ s
        sbs = float(s @ bs)
        sy = float(s @ y)
        if sbs > 0.0:
            if sy < 0.2 * sbs:                       # Powell damping
                theta = 0.8 * sbs / (sbs - sy)
                y = theta * y + (1.0 - theta) * bs
                sy = float(s @ y)
            if sy > 1e-12:
                b_mat = b_mat - np.outer(bs, bs) / sbs + np.outer(y, y) / sy
                b_mat = 0.5 * (b_mat + b_mat.T)
        x, f, g, c, jac = x_new, f_try, g_try, c_try, jac_try
    p = nlp.design(x) if hasattr(nlp, "design") else x
    return SqpResult(x=x, p=np.asarray(p), f=f, constraints=c, converged=converged,
                     n_iter=it, kkt=kkt, multipliers=mu, trace=trace)


# -- particle swarm -------------------------------------------------------------

@dataclass(frozen=True)
class PsoOptions:
    n_particles: int = 50
    omega: float = 0.5
    c_personal: float = 1.49
    c_global: float = 1.49
    max_iter: int = 100
    spread_tol: float = 1e-6
    stall_iters: int = 15
    penalty: float = 1e4


@dataclass
class PsoResult:
    p: NDArray
    f: float
    violation: float
    fitness: float
    n_iter: int
    n_evals: int
    stop_reason: str
    trace: list = field(default_factory=list)


def solve_pso(objective: Callable, violations: Callable, lower, upper,
              seed: int = 0, options: PsoOptions = PsoOptions()) -> PsoResult:
    """Global-best particle swarm on a box with quadratic constraint penalty.

    Velocities start at zero; positions are clipped back onto the box.
    Stopping: iteration budget, mean particle distance to the swarm best
    below spread_tol, or no best-fitness improvement for stall_iters
    consecutive iterations.
    """
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    dim = lower.size
    opts = options
    rng = np.random.Generator(np.random.Philox(seed))
    pos = lower + rng.random((opts.n_particles, dim)) * (upper - lower)
    vel = np.zeros_like(pos)

    def fitness(p):
        v = np.clip(violations(p), 0.0, None)
        return objective(p) + opts.penalty * float(v @ v), float(v.max(initial=0.0))

    n_evals = 0

    def evaluate(points):
        nonlocal n_evals
        out = np.empty(len(points))
        out_v = np.empty(len(points))
        for i, p in enumerate(points):
            out[i], out_v[i] = fitness(p)
            n_evals += 1
        return out, out_v

    fit, viol = evaluate(pos)
    pbest = pos.copy()
    pbest_fit = fit.copy()
    pbest_viol = viol.copy()
    g_i = int(np.argmin(fit))
    gbest = pos[g_i].copy()
    gbest_fit = float(fit[g_i])
    gbest_viol = float(viol[g_i])

    trace = []
    stall = 0
    stop_reason = "max_iter"
    it = 0
    for it in range(1, opts.max_iter + 1):
        r1 = rng.random((opts.n_particles, dim))
        r2 = rng.random((opts.n_particles, dim))
        vel = (opts.omega * vel
               + opts.c_personal * r1 * (pbest - pos)
               + opts.c_global * r2 * (gbest - pos))
        pos = np.clip(pos + vel, lower, upper)
        fit, viol = evaluate(pos)

        better = fit < pbest_fit
        pbest[better] = pos[better]
        pbest_fit[better] = fit[better]
        pbest_viol[better] = viol[better]
        b_i = int(np.argmin(pbest_fit))
        improved = pbest_fit[b_i] < gbest_fit - 1e-12 * max(1.0, abs(gbest_fit))
        if pbest_fit[b_i] < gbest_fit:
            gbest = pbest[b_i].copy()
            gbest_fit = float(pbest_fit[b_i])
            gbest_viol = float(pbest_viol[b_i])
        stall = 0 if improved else stall + 1

        spread = float(np.mean(np.linalg.norm(pos - gbest, axis=1)))
        trace.append({"iter": it, "objective": gbest_fit,
                      "violation": gbest_viol, "step": spread, "stall": stall})
        if spread < opts.spread_tol:
            stop_reason = "spread"
            break
        if stall >= opts.stall_iters:
            stop_reason = "stall"
            break

    obj = objective(gbest)
    return PsoResult(p=gbest, f=float(obj), violation=gbest_viol,
                     fitness=gbest_fit, n_iter=it, n_evals=n_evals,
                     stop_reason=stop_reason, trace=trace)
