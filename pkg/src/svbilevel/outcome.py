"""Outcome-space scaffolding: bounding box, ray scalarization and the
monotone value function.

The lower objectives map the (compact) set X into the outcome space.  A box
[m, M] containing the image is built from p minimizing flows (for m), a
simplex enclosure of X and vertex evaluation (for M).  Two parametric
subproblem families drive the main algorithm: the ray problem
min_x max_j (f_j(x) - v_j) / d_j whose optimum projects v onto the weakly
nondominated frontier, and MP(z): phi(z) = min {h(x, y) | (x, y) in G,
f(x) <= z}, a decreasing function of z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import neurodynamic as nd
from .expr import BinOp, CompiledExpr, Const, Max
from .problem import AffineRow, BilevelProblem, find_interior_start, \
    stacked_mp_constraints


class OutcomeError(Exception):
    pass


@dataclass
class OutcomeBox:
    m: np.ndarray
    M: np.ndarray
    simplex_vertices: list
    U: float
    m_argmin: Optional[list] = None

    def contains(self, z, tol: float = 1e-9) -> bool:
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= self.m - tol) and np.all(z <= self.M + tol))


@dataclass
class RaySolution:
    v: np.ndarray
    t: float
    x: np.ndarray
    w: np.ndarray
    d_hat: np.ndarray


@dataclass
class MpSolution:
    z: np.ndarray
    phi: float
    x: Optional[np.ndarray]
    y: Optional[np.ndarray]
    feasible: bool


def _require_converged(res: nd.FlowResult, what: str) -> nd.FlowResult:
    if res.status is nd.FlowStatus.DIVERGED:
        raise OutcomeError(f"{what}: flow diverged (unbounded problem?)")
    return res


def compute_box(problem: BilevelProblem, config: Optional[nd.FlowConfig] = None
                ) -> OutcomeBox:
    """Box [m, M] containing the outcome set: m from p minimizing flows,
    M from evaluating each objective on the vertices of a simplex
    enclosing X."""
    if config is None:
        config = nd.FlowConfig()
    region = problem.x_region()
    x0 = find_interior_start(problem, config)
    if x0 is None:
        raise OutcomeError("X is empty: no feasible point found")

    n, p = problem.n, problem.p
    m = np.zeros(p)
    m_argmin = []
    start = x0
    for i, f in enumerate(problem.lower):
        res = _require_converged(nd.solve_flow(f, region, start, config),
                                 f"min f_{i + 1} over X")
        m[i] = res.objective_value
        m_argmin.append(res.x_final.copy())
        start = res.x_final

    # simplex enclosure: componentwise minima and the max of the coordinate sum
    delta0 = np.zeros(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        res = _require_converged(
            nd.solve_flow(AffineRow(e, 0.0), region, x0, config),
            f"min x_{k + 1} over X")
        delta0[k] = res.objective_value
    res = _require_converged(
        nd.solve_flow(AffineRow(-np.ones(n), 0.0), region, x0, config),
        "max <e, x> over X")
    U = -res.objective_value

    vertices = [delta0.copy()]
    total = float(np.sum(delta0))
    for i in range(n):
        v = delta0.copy()
        v[i] = U - (total - delta0[i])
        vertices.append(v)

    M = np.full(p, -math.inf)
    for i, f in enumerate(problem.lower):
        for v in vertices:
            M[i] = max(M[i], f.value(v))
    return OutcomeBox(m=m, M=M, simplex_vertices=vertices, U=U,
                      m_argmin=m_argmin)


def ray_objective(problem: BilevelProblem, v, d_hat) -> CompiledExpr:
    """Compiled  max_j (f_j(x) - v_j) / d_j  with nested max branches of the
    f_j flattened into the top-level generator set."""
    children = []
    for j, f in enumerate(problem.lower):
        branches = f.ast.children if isinstance(f.ast, Max) else (f.ast,)
        for b in branches:
            shifted = BinOp("-", b, Const(float(v[j])))
            children.append(BinOp("/", shifted, Const(float(d_hat[j]))))
    ast = Max(tuple(children)) if len(children) > 1 else children[0]
    return CompiledExpr(ast, problem.n)


def solve_ray(problem: BilevelProblem, box: Optional[OutcomeBox], v, d_hat,
              config: Optional[nd.FlowConfig] = None,
              x0: Optional[np.ndarray] = None) -> RaySolution:
    """Project v along direction d_hat onto the weakly nondominated frontier
    by the scalarized pseudoconvex flow."""
    if config is None:
        config = nd.FlowConfig()
    v = np.asarray(v, dtype=float)
    d_hat = np.asarray(d_hat, dtype=float)
    if np.any(d_hat <= 0.0):
        raise ValueError("ray direction must be strictly positive")
    region = problem.x_region()
    if x0 is None:
        x0 = find_interior_start(problem, config)
        if x0 is None:
            raise OutcomeError("X is empty: no feasible point found")
    obj = ray_objective(problem, v, d_hat)
    res = _require_converged(nd.solve_flow(obj, region, x0, config), "ray problem")
    x = res.x_final
    # recompute t from the terminal point so the ray identity is exact
    t = max((f.value(x) - v[j]) / d_hat[j] for j, f in enumerate(problem.lower))
    return RaySolution(v=v, t=t, x=x, w=v + t * d_hat, d_hat=d_hat)


def solve_mp(problem: BilevelProblem, z, config: Optional[nd.FlowConfig] = None,
             u0: Optional[np.ndarray] = None) -> MpSolution:
    """phi(z) = min {h(x, y) | (x, y) in G, f(x) <= z}.  Infeasible z is
    detected by a stalled feasibility phase."""
    if config is None:
        config = nd.FlowConfig()
    z = np.asarray(z, dtype=float)
    stack = stacked_mp_constraints(problem, z)
    total = problem.n + problem.m
    if u0 is None:
        u0 = np.zeros(total)
        x0 = find_interior_start(problem, config)
        if x0 is not None:
            u0[: problem.n] = x0
        if problem.m:
            u0[problem.n:] = 1.0
    u_feas = nd.find_feasible(stack, u0, config)
    if u_feas is None:
        return MpSolution(z=z, phi=math.inf, x=None, y=None, feasible=False)
    res = _require_converged(nd.solve_flow(problem.upper, stack, u_feas, config),
                             "MP value flow")
    u = res.x_final
    return MpSolution(z=z, phi=float(res.objective_value),
                      x=u[: problem.n].copy(), y=u[problem.n:].copy(),
                      feasible=True)


class PhiCache:
    """Memoizes MP solutions per outcome vector (keyed at 1e-9 resolution);
    the driver re-queries vertices across iterations."""

    def __init__(self, problem: BilevelProblem,
                 config: Optional[nd.FlowConfig] = None):
        self.problem = problem
        self.config = config if config is not None else nd.FlowConfig()
        self._table = {}
        self.misses = 0

    @staticmethod
    def _key(z) -> tuple:
        return tuple(round(float(c) * 1e9) for c in z)

    def get(self, z, u0: Optional[np.ndarray] = None) -> MpSolution:
        key = self._key(z)
        hit = self._table.get(key)
        if hit is None:
            hit = solve_mp(self.problem, z, self.config, u0=u0)
            self._table[key] = hit
            self.misses += 1
        return hit

    def __len__(self):
        return len(self._table)
