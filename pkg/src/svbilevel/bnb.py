"""Branch-and-bound driver over the outcome space.

The driver maintains an inner copolyblock approximation of the weakly
nondominated outcome set.  Each iteration evaluates the monotone value
function phi at the pending vertices, takes the least value as the lower
bound beta, projects the argmin vertex onto the frontier along a positive
ray, tries to lift the projected point to a feasible upper-level pair for
the incumbent, and cuts the vertex with the projection.  The loop stops
when alpha - beta <= epsilon * (1 + |beta|), when the vertex set empties,
or at the iteration cap.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import neurodynamic as nd
from .copolyblock import VertexSet, cut, prune, select_min_phi
from .outcome import OutcomeBox, PhiCache, compute_box, solve_ray
from .problem import AffineRow, BilevelProblem


class SolverStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass
class SolverConfig:
    epsilon: float = 1e-2
    direction: Optional[np.ndarray] = None
    flow: nd.FlowConfig = field(default_factory=nd.FlowConfig)
    max_iterations: int = 500
    boundary_tol: float = 1e-9
    w_match_tol: float = 1e-4

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.direction is not None:
            self.direction = np.asarray(self.direction, dtype=float)
            if np.any(self.direction <= 0.0):
                raise ValueError("direction must be strictly positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class Incumbent:
    x: np.ndarray
    y: np.ndarray
    h: float


@dataclass
class IterationRow:
    k: int
    v: np.ndarray
    alpha: float
    beta: float

    @property
    def gap(self) -> float:
        return self.alpha - self.beta


@dataclass
class SolverState:
    box: OutcomeBox
    V: VertexSet
    cache: PhiCache
    alpha: float
    beta: float
    incumbent: Optional[Incumbent]
    k: int = 0
    log: list = field(default_factory=list)
    terminated: bool = False
    status: Optional[SolverStatus] = None


@dataclass
class SolverReport:
    status: SolverStatus
    incumbent: Optional[Incumbent]
    alpha: float
    beta: float
    log: list
    iterations: int
    wall_time: float
    box: OutcomeBox


class _FixedHeadRow:
    """Constraint over y obtained by freezing the x-part of a row over
    u = (x, y)."""

    def __init__(self, base, x: np.ndarray):
        self.base = base
        self.x = np.asarray(x, dtype=float)
        self.label = getattr(base, "label", "")

    def _lift(self, y):
        return np.concatenate([self.x, np.asarray(y, dtype=float)])

    def value(self, y) -> float:
        return self.base.value(self._lift(y))

    def value_grad(self, y):
        v, g = self.base.value_grad(self._lift(y))
        return v, g[len(self.x):]


def _ray_direction(config: SolverConfig, box: OutcomeBox, v: np.ndarray
                   ) -> np.ndarray:
    if config.direction is not None:
        return config.direction
    # adaptive ray: aim from the vertex toward m, floored away from zero so
    # the direction stays strictly positive on the lower faces; the floor is
    # tiny because an inflated component chokes the step the ray can take
    # in the coordinates that still have distance to cover
    span = np.maximum(box.M - box.m, 1e-9)
    return np.maximum(v - box.m, 1e-6 * span)


def _evaluate_pending(state: SolverState, problem: BilevelProblem,
                      config: SolverConfig) -> None:
    """Fill phi for pending vertices; drop infeasible vertices and vertices
    whose minimizer sits on the lower boundary of the box (those outcomes
    are covered by the initialization subproblems)."""
    for v in list(state.V.pending()):
        sol = state.cache.get(v.z)
        v.mp = sol
        v.phi = sol.phi
        if not sol.feasible:
            continue
        for i, f in enumerate(problem.lower):
            if abs(f.value(sol.x) - state.box.m[i]) <= config.boundary_tol:
                state.V.remove(v)
                break
    prune(state.V)


def initialize(problem: BilevelProblem, config: SolverConfig) -> SolverState:
    """Box, singleton vertex set {M}, the p lower-face upper-bound probes
    and the initial bounds."""
    box = compute_box(problem, config.flow)
    cache = PhiCache(problem, config.flow)
    V = VertexSet(box)
    V.add(box.M)

    alpha = math.inf
    incumbent = None
    for i in range(problem.p):
        z = box.M.copy()
        # tiny slack above the face: {f_i <= m_i} is exactly the argmin
        # slice of f_i, which has no interior for a feasibility flow to find
        z[i] = box.m[i] + 1e-6 * max(1.0, abs(box.m[i]))
        # warm start at the recorded argmin of f_i: the probe's feasible set
        # hugs that point, far too thin to find from a generic start
        u0 = None
        if box.m_argmin is not None:
            u0 = np.concatenate([box.m_argmin[i], np.ones(problem.m)])
        sol = cache.get(z, u0)
        if sol.feasible and sol.phi < alpha:
            alpha = sol.phi
            incumbent = Incumbent(x=sol.x, y=sol.y, h=sol.phi)

    top = cache.get(box.M)
    state = SolverState(box=box, V=V, cache=cache, alpha=alpha,
                        beta=top.phi if top.feasible else math.inf,
                        incumbent=incumbent)
    if not top.feasible and incumbent is None:
        state.terminated = True
        state.status = SolverStatus.INFEASIBLE
    return state


def find_feasible_y(problem: BilevelProblem, x, config: SolverConfig
                    ) -> Optional[np.ndarray]:
    """Lift x to (x, y) in G at fixed x; with no lower-level-free variables
    this reduces to a membership check."""
    x = np.asarray(x, dtype=float)
    region = problem.x_region()
    if any(c.value(x) > 1e-6 for c in region):
        return None
    if problem.m == 0:
        u = x
        if any(g.value(u) > 1e-6 for g in problem.coupling):
            return None
        return np.zeros(0)
    rows = [_FixedHeadRow(g, x) for g in problem.coupling]
    for j in range(problem.m):
        e = np.zeros(problem.m)
        e[j] = -1.0
        rows.append(AffineRow(e, 0.0, label=f"y{j + 1} >= 0"))
    for b in problem.bounds:
        if b.name not in problem.y_names:
            continue
        j = problem.y_names.index(b.name)
        e = np.zeros(problem.m)
        if math.isfinite(b.lo):
            e2 = e.copy()
            e2[j] = -1.0
            rows.append(AffineRow(e2, b.lo, label=f"{b.name} >= {b.lo}"))
        if math.isfinite(b.hi):
            e2 = e.copy()
            e2[j] = 1.0
            rows.append(AffineRow(e2, -b.hi, label=f"{b.name} <= {b.hi}"))
    return nd.find_feasible(rows, np.ones(problem.m), config.flow)


def iterate(state: SolverState, problem: BilevelProblem,
            config: SolverConfig) -> SolverState:
    """One bound-update / projection / cut round."""
    if state.terminated:
        return state
    state.k += 1
    _evaluate_pending(state, problem, config)
    if len(state.V) == 0:
        state.terminated = True
        if state.incumbent is not None:
            state.beta = state.alpha
            state.status = SolverStatus.OPTIMAL
        else:
            state.status = SolverStatus.INFEASIBLE
        return state

    vertex, beta_raw = select_min_phi(state.V)
    # phi decreases while vertices shrink, so the running minimum cannot
    # honestly drop; clamp out flow noise and keep the gap nonnegative
    state.beta = min(max(state.beta, beta_raw), state.alpha)
    v = vertex.z

    d_hat = _ray_direction(config, state.box, v)
    ray = solve_ray(problem, state.box, v, d_hat, config.flow,
                    x0=vertex.mp.x if vertex.mp is not None else None)
    z_k = np.array([f.value(ray.x) for f in problem.lower])
    w = np.clip(ray.w, state.box.m, v)

    # the incumbent candidate is only valid when the ray point is itself an
    # outcome; a stale candidate from a failed match must not be re-applied
    update = False
    y_k = None
    if (np.max(np.abs(ray.w - z_k)) <= config.w_match_tol
            and np.all(ray.w > state.box.m + config.boundary_tol)):
        y_k = find_feasible_y(problem, ray.x, config)
        update = y_k is not None
    if update:
        u = np.concatenate([ray.x, y_k])
        h_k = problem.upper.value(u)
        if h_k < state.alpha:
            state.alpha = h_k
            state.incumbent = Incumbent(x=ray.x.copy(), y=y_k, h=h_k)
            state.beta = min(state.beta, state.alpha)

    if state.alpha - state.beta <= config.epsilon * (1.0 + abs(state.beta)):
        state.terminated = True
        state.status = SolverStatus.OPTIMAL
    else:
        cut(state.V, vertex, w)
        prune(state.V)

    state.log.append(IterationRow(k=state.k, v=v.copy(), alpha=state.alpha,
                                  beta=state.beta))
    return state


def solve(problem: BilevelProblem,
          config: Optional[SolverConfig] = None) -> SolverReport:
    if config is None:
        config = SolverConfig()
    t0 = time.perf_counter()
    state = initialize(problem, config)
    while not state.terminated and state.k < config.max_iterations:
        iterate(state, problem, config)
    if not state.terminated:
        state.status = SolverStatus.MAX_ITERATIONS
    if state.status is SolverStatus.OPTIMAL and state.incumbent is None:
        # exhausted every vertex without ever lifting a feasible pair
        state.status = SolverStatus.INFEASIBLE
    return SolverReport(status=state.status, incumbent=state.incumbent,
                        alpha=state.alpha, beta=state.beta, log=state.log,
                        iterations=state.k,
                        wall_time=time.perf_counter() - t0, box=state.box)
