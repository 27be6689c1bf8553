"""Differential-inclusion flow for nonsmooth pseudoconvex programs.

Integrates  dx/dt in -c(x) dr(x) - dS(x)  with explicit Euler and per-step
backtracking (halve dt while the step increases S outside the feasible set or
increases r inside it).  The right-hand side is a selection from the Clarke
sets: near-active constraint weights and objective-generator weights are
chosen by a minimum-norm rule so the discrete flow slides along boundaries
and nonsmooth valleys instead of chattering.

Constraint oracles are objects with ``value(x)`` and ``value_grad(x)``;
an optional ``affine`` attribute ``(coeffs, const)`` enables a vectorized
fast path.  Objectives additionally may expose ``value_generators(x)``
returning ``(value, [gradient, ...])`` for max-type nonsmooth objectives.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ZERO_BAND = 1e-9

# Activity-band floor (in constraint-value units, scaled by gradient norms).
# Sets the spatial resolution at which boundary and objective-kink contact is
# recognized; matches the 1e-3 accuracy the flow promises on terminal points.
CERT_BAND = 1e-4


class FlowStatus(enum.Enum):
    CONVERGED = "Converged"
    MAX_TIME = "MaxTime"
    DIVERGED = "Diverged"
    INFEASIBLE_START = "InfeasibleStart"


class FlowError(Exception):
    pass


@dataclass
class FlowConfig:
    dt: float = 1e-2
    t_max: float = 200.0
    stationarity_tol: float = 1e-6
    feasibility_tol: float = 1e-7
    psi_zero_selection: float = 0.5
    max_steps: int = 200_000
    divergence_radius: float = 1e7
    trace: Optional["TraceRecorder"] = None

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0:
            raise ValueError("dt and t_max must be positive")
        if self.stationarity_tol <= 0 or self.feasibility_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 <= self.psi_zero_selection <= 1.0:
            raise ValueError("psi_zero_selection must lie in [0, 1]")


@dataclass
class FlowResult:
    x_final: np.ndarray
    objective_value: float
    penalty_residual: float
    status: FlowStatus
    steps: int = 0
    final_velocity_norm: float = math.inf

    @property
    def converged(self) -> bool:
        return self.status is FlowStatus.CONVERGED


class TraceRecorder:
    """Collects per-step flow rows: (flow_id, t, x..., r, S, speed)."""

    def __init__(self):
        self.rows = []
        self._flow_id = 0

    def next_flow(self) -> int:
        self._flow_id += 1
        return self._flow_id

    def record(self, flow_id, t, x, r, s, speed):
        self.rows.append((flow_id, t, tuple(float(v) for v in x), r, s, speed))


# ---------------------------------------------------------------------------
# Spec-level primitive operations
# ---------------------------------------------------------------------------

def psi(xi: float, selection: float = 0.5) -> float:
    """Selection from d(max{0, xi}): 1 above zero, 0 below, ``selection`` on
    the zero band."""
    if xi > ZERO_BAND:
        return 1.0
    if xi < -ZERO_BAND:
        return 0.0
    return selection


def penalty(x, constraints: Sequence) -> float:
    """S(x) = sum_i max{0, s_i(x)}."""
    total = 0.0
    for c in constraints:
        v = c.value(x)
        if v > 0.0:
            total += v
    return total


def penalty_subgradient(x, constraints: Sequence, selection: float = 0.5) -> np.ndarray:
    """Selected element of dS(x): full gradients of violated rows plus
    ``selection``-weighted gradients of zero-band rows."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(len(x))
    for c in constraints:
        v = c.value(x)
        if v > ZERO_BAND:
            out += c.value_grad(x)[1]
        elif v >= -ZERO_BAND and selection != 0.0:
            out += selection * c.value_grad(x)[1]
    return out


def step_gain(x, constraints: Sequence, selection: float = 0.5) -> float:
    """c(x) = prod_i (1 - Psi(s_i(x))): 1 inside, 0 outside, fractional on
    the boundary band."""
    gain = 1.0
    for c in constraints:
        gain *= 1.0 - psi(c.value(x), selection)
        if gain == 0.0:
            return 0.0
    return gain


# ---------------------------------------------------------------------------
# Constraint stack with affine fast path
# ---------------------------------------------------------------------------

class _Stack:
    def __init__(self, constraints: Sequence, n: int):
        self.n = n
        aff_rows = []
        aff_consts = []
        self.nonlinear = []
        for c in constraints:
            aff = getattr(c, "affine", None)
            if aff is not None:
                aff_rows.append(np.asarray(aff[0], dtype=float))
                aff_consts.append(float(aff[1]))
            else:
                self.nonlinear.append(c)
        self.A = np.array(aff_rows) if aff_rows else np.zeros((0, n))
        self.b = np.array(aff_consts)
        self.row_norms = np.linalg.norm(self.A, axis=1) if len(aff_rows) else np.zeros(0)
        self._nl_norm_cache = [1.0] * len(self.nonlinear)

    @property
    def size(self) -> int:
        return self.A.shape[0] + len(self.nonlinear)

    def values(self, x) -> np.ndarray:
        nl = [c.value(x) for c in self.nonlinear]
        if self.A.shape[0]:
            return np.concatenate([self.A @ x + self.b, np.array(nl)])
        return np.array(nl)

    def row_grad(self, i: int, x) -> np.ndarray:
        na = self.A.shape[0]
        if i < na:
            return self.A[i]
        g = self.nonlinear[i - na].value_grad(x)[1]
        self._nl_norm_cache[i - na] = max(float(np.linalg.norm(g)), 1e-12)
        return g

    def row_norm_estimate(self, i: int) -> float:
        na = self.A.shape[0]
        if i < na:
            return max(self.row_norms[i], 1e-12)
        return self._nl_norm_cache[i - na]

    def total_penalty(self, vals: np.ndarray) -> float:
        pos = vals[vals > 0.0]
        return float(pos.sum()) if pos.size else 0.0


# ---------------------------------------------------------------------------
# Minimum-norm selection
# ---------------------------------------------------------------------------

def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)

LAM_CAP = 1e8


def _min_norm_combo(obj_gens: list, c_gain: float, g_plus: np.ndarray,
                    act_gens: list) -> np.ndarray:
    """argmin over mu in simplex, lam in [0, cap]^k of
    || c*sum mu_j G_j + g_plus + sum lam_i A_i ||, returns the velocity
    (negated combination).  The active-row weights form a cone rather than
    a box: a curved constraint with a tiny gradient needs a large multiplier
    to certify stationarity against the objective."""
    nobj = len(obj_gens)
    k = len(act_gens)
    if nobj <= 1 and k == 0:
        g = g_plus + (c_gain * obj_gens[0] if nobj else 0.0)
        return -g
    if nobj <= 1 and k == 1:
        g = g_plus + (c_gain * obj_gens[0] if nobj else 0.0)
        a = act_gens[0]
        den = float(a @ a)
        lam = min(LAM_CAP, max(0.0, -float(g @ a) / den)) if den > 0.0 else 0.0
        return -(g + lam * a)
    G = np.array([c_gain * g for g in obj_gens]) if nobj else np.zeros((0, len(g_plus)))
    A = np.array(act_gens) if k else np.zeros((0, len(g_plus)))
    M = np.vstack([G, A]) if (nobj or k) else np.zeros((0, len(g_plus)))
    # tiny accelerated projected-gradient QP: z = [mu, lam]
    mu = np.full(nobj, 1.0 / nobj) if nobj else np.zeros(0)
    lam = np.zeros(k)
    MMt = M @ M.T
    Mb = M @ g_plus
    lip = float(np.trace(MMt)) + 1e-12
    step = 1.0 / lip

    def proj(z):
        head = _project_simplex(z[:nobj]) if nobj else z[:nobj]
        return np.concatenate([head, np.clip(z[nobj:], 0.0, LAM_CAP)])

    def qval(z):
        return 0.5 * float(z @ (MMt @ z)) + float(Mb @ z)

    z = np.concatenate([mu, lam])
    y = z.copy()
    theta = 1.0
    q_prev = qval(z)
    for _ in range(1000):
        z_new = proj(y - step * (MMt @ y + Mb))
        q_new = qval(z_new)
        if q_new > q_prev:
            # adaptive restart: drop the momentum when the value rises
            y = z_new.copy()
            theta = 1.0
        else:
            theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
            y = z_new + (theta - 1.0) / theta_new * (z_new - z)
            theta = theta_new
        moved = float(np.linalg.norm(z_new - z))
        z = z_new
        q_prev = q_new
        if moved < 1e-14:
            break
    z = _polish_active_set(M, g_plus, nobj, proj, z)
    mu, lam = z[:nobj], z[nobj:]
    combo = g_plus.copy()
    if nobj:
        combo += G.T @ mu
    if k:
        combo += A.T @ lam
    return -combo


def _polish_active_set(M: np.ndarray, g_plus: np.ndarray, nobj: int, proj,
                       z: np.ndarray) -> np.ndarray:
    """Exact least-squares refit on the coordinates the projected-gradient
    iterate left strictly interior; degenerate active sets leave the
    accelerated iterations with a residual well above the certificate
    tolerance."""
    def resid(z):
        return float(np.linalg.norm(g_plus + M.T @ z))

    best = z
    best_r = resid(z)
    for _ in range(3):
        interior = np.empty(len(best), dtype=bool)
        interior[:nobj] = best[:nobj] > 1e-12
        interior[nobj:] = (best[nobj:] > 1e-12) & (best[nobj:] < 0.999 * LAM_CAP)
        if not np.any(interior):
            break
        fixed = best.copy()
        fixed[interior] = 0.0
        r0 = g_plus + M.T @ fixed
        Mf = M[interior]
        head = interior[:nobj]
        if np.any(head):
            # keep the simplex weights summing to one via a KKT system
            a = np.zeros(int(interior.sum()))
            a[: int(head.sum())] = 1.0
            s = 1.0 - float(np.sum(fixed[:nobj]))
            H = 2.0 * (Mf @ Mf.T)
            kkt = np.zeros((len(a) + 1, len(a) + 1))
            kkt[: len(a), : len(a)] = H
            kkt[: len(a), -1] = a
            kkt[-1, : len(a)] = a
            rhs = np.concatenate([-2.0 * (Mf @ r0), [s]])
            w = np.linalg.lstsq(kkt, rhs, rcond=None)[0][: len(a)]
        else:
            w = np.linalg.lstsq(Mf.T, -r0, rcond=None)[0]
        cand = fixed.copy()
        cand[interior] = w
        cand = proj(cand)
        r = resid(cand)
        if r < best_r - 1e-15:
            best, best_r = cand, r
        else:
            break
    return best


def _objective_generators(objective, x, band: float):
    gen_fn = getattr(objective, "value_generators", None)
    if gen_fn is not None:
        return gen_fn(x, band)
    v, g = objective.value_grad(x)
    return v, [g]


# ---------------------------------------------------------------------------
# Flows
# ---------------------------------------------------------------------------

def _selected_velocity(stack: _Stack, objective, x, band_scale: float,
                       config: FlowConfig):
    """Returns (velocity, S_exact, r_value). ``objective`` may be None for a
    pure penalty flow."""
    vals = stack.values(x)
    s_exact = stack.total_penalty(vals)
    g_plus = np.zeros(stack.n)
    act_gens = []
    any_plus = False
    prod_gain = 1.0
    for i in range(stack.size):
        band = max(ZERO_BAND, band_scale * stack.row_norm_estimate(i))
        v = vals[i]
        if v > band:
            g_plus += stack.row_grad(i, x)
            any_plus = True
        elif v >= -band:
            g = stack.row_grad(i, x)
            band = max(ZERO_BAND, band_scale * stack.row_norm_estimate(i))
            act_gens.append(g)
            # smoothed Psi on the band: 0.5 at the boundary itself
            prod_gain *= 1.0 - min(1.0, max(0.0, 0.5 + v / (2.0 * band)))
    if objective is None:
        vel = _min_norm_combo([], 0.0, g_plus, act_gens if any_plus else [])
        if not any_plus and not act_gens:
            vel = np.zeros(stack.n)
        r_val = math.nan
    else:
        c_gain = 0.0 if any_plus else prod_gain
        obj_band = max(getattr(objective, "active_tol", ZERO_BAND), band_scale)
        r_val, obj_gens = _objective_generators(objective, x, obj_band)
        if c_gain == 0.0:
            vel = _min_norm_combo([], 0.0, g_plus, act_gens)
        else:
            vel = _min_norm_combo(obj_gens, c_gain, g_plus, act_gens)
    return vel, s_exact, r_val, any_plus


def solve_flow(objective, constraints: Sequence, x0, config: FlowConfig,
               require_feasible_start: bool = False) -> FlowResult:
    """Integrate the inclusion from ``x0`` until stationarity, divergence or
    the time/step budget runs out."""
    x = np.asarray(x0, dtype=float).copy()
    n = len(x)
    stack = _Stack(constraints, n)
    trace = config.trace
    flow_id = trace.next_flow() if trace else 0

    s0 = stack.total_penalty(stack.values(x))
    if require_feasible_start and s0 > config.feasibility_tol:
        return FlowResult(x, math.nan, s0, FlowStatus.INFEASIBLE_START)

    dt = config.dt
    dt_max = config.dt * 1e4
    t = 0.0
    speed = 1.0
    band_factor = 1.0
    stalls = 0
    status = FlowStatus.MAX_TIME
    steps = 0
    vnorm = math.inf
    for steps in range(1, config.max_steps + 1):
        if t >= config.t_max:
            status = FlowStatus.MAX_TIME
            break
        vel, s_exact, r_val, outside = _selected_velocity(
            stack, objective, x, CERT_BAND * band_factor, config)
        vnorm = float(np.linalg.norm(vel))
        if trace:
            trace.record(flow_id, t, x, r_val, s_exact, vnorm)
        if vnorm <= config.stationarity_tol:
            break
        # explicit Euler on the unit-speed reparameterization: the gain
        # product shrinks the velocity near active constraints without
        # changing the path, so stepping along the direction keeps the
        # time budget meaningful as arc length
        direction = vel / vnorm
        trial = dt
        accepted = False
        # penalty descent governs only when some row exceeds its activity
        # band; within the band the flow slides and r-descent governs
        infeasible_phase = outside
        for _ in range(31):
            xn = x + trial * direction
            if np.array_equal(xn, x):
                # motion below float resolution: numeric stationarity
                break
            vals_n = stack.values(xn)
            s_n = stack.total_penalty(vals_n)
            # Armijo margin: plain non-increase admits exact two-point cycles
            # across kinks where the objective is symmetric
            margin = 1e-4 * trial * vnorm
            if infeasible_phase:
                ok = s_n <= s_exact - margin + 1e-15
            else:
                # project the candidate back onto the boundary first: judging
                # descent on a point that will be pulled back afterwards
                # admits a limit cycle where the pullback undoes the decrease
                if s_n > ZERO_BAND:
                    xn = _polish_feasibility(stack, xn, config)
                    vals_n = stack.values(xn)
                    s_n = stack.total_penalty(vals_n)
                # monotone r and no escape beyond the boundary band, else the
                # flow limit-cycles across the boundary (r can decrease there)
                r_n = objective.value(xn) if objective is not None else 0.0
                ok = r_n <= r_val - margin + 1e-15 * max(1.0, abs(r_val))
                if ok:
                    for i in range(stack.size):
                        if vals_n[i] > CERT_BAND * stack.row_norm_estimate(i):
                            ok = False
                            break
            if ok:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            # at a degenerate vertex a blocking row just outside the band
            # defeats every step; widen the band so it joins the balance
            if band_factor < 100.0:
                band_factor *= 10.0
                continue
            break
        # displacement equals trial (unit direction); a run of vanishing
        # accepted steps means numeric stagnation the margins cannot see
        if trial < 1e-12 * max(1.0, float(np.linalg.norm(x))):
            stalls += 1
            if stalls >= 100:
                break
        else:
            stalls = 0
        band_factor = 1.0
        x = xn
        t += trial
        speed = vnorm
        # adaptive step: grow on clean acceptance, follow the backtracked
        # scale otherwise
        if trial == dt:
            dt = min(dt * 2.0, dt_max)
        else:
            dt = trial * 4.0
        if np.linalg.norm(x) > config.divergence_radius:
            return FlowResult(x, math.nan, stack.total_penalty(stack.values(x)),
                              FlowStatus.DIVERGED, steps, vnorm)
    else:
        status = FlowStatus.MAX_TIME

    x = _polish_feasibility(stack, x, config)
    # certify at the base band, escalating as above for degenerate vertices
    vnorm = math.inf
    for factor in (1.0, 10.0, 100.0):
        vel, s_final, r_final, _ = _selected_velocity(
            stack, objective, x, CERT_BAND * factor, config)
        vnorm = min(vnorm, float(np.linalg.norm(vel)))
        if vnorm <= config.stationarity_tol:
            break
    if vnorm <= config.stationarity_tol and s_final <= config.feasibility_tol:
        status = FlowStatus.CONVERGED
    else:
        status = FlowStatus.MAX_TIME
    if objective is None:
        r_final = s_final
    return FlowResult(x, float(r_final), s_final, status, steps, vnorm)


def _polish_feasibility(stack: _Stack, x: np.ndarray, config: FlowConfig) -> np.ndarray:
    """Pure penalty descent with small steps to push a near-feasible terminal
    point inside the tolerance band."""
    for _ in range(200):
        vals = stack.values(x)
        s = stack.total_penalty(vals)
        if s <= 0.5 * config.feasibility_tol:
            break
        # Gauss-Newton on the violated rows: a summed-gradient step is
        # defeated when a nearly-tight row's gradient opposes the violated
        # one, so solve the linearized system jointly instead
        rows = [i for i in range(stack.size) if vals[i] > 0.0]
        G = np.array([stack.row_grad(i, x) for i in rows])
        r = np.array([vals[i] for i in rows])
        if float(np.sum(G * G)) <= 1e-24:
            break
        delta = np.linalg.lstsq(G, r, rcond=None)[0]
        moved = False
        for _ in range(8):
            xn = x - delta
            if stack.total_penalty(stack.values(xn)) < s:
                x = xn
                moved = True
                break
            delta *= 0.5
        if not moved:
            break
    return x


def find_feasible(constraints: Sequence, x_init, config: FlowConfig) -> Optional[np.ndarray]:
    """Penalty-descent flow; returns a feasible point, or None when the
    descent stalls at positive penalty (infeasible system)."""
    x = np.asarray(x_init, dtype=float).copy()
    stack = _Stack(constraints, len(x))
    dt = config.dt
    for _ in range(config.max_steps):
        vals = stack.values(x)
        s = stack.total_penalty(vals)
        if s <= config.feasibility_tol:
            return x
        g = np.zeros(stack.n)
        norm_sq = 0.0
        for i in range(stack.size):
            if vals[i] > ZERO_BAND:
                gi = stack.row_grad(i, x)
                g += gi
                norm_sq += float(gi @ gi)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.stationarity_tol:
            return None
        # Newton-like secant step toward S = 0, fall back to Euler + backtracking
        trial = min(max(dt, s / max(norm_sq, 1e-300)), 1e6)
        accepted = False
        for _ in range(31):
            xn = x - trial * g
            s_n = stack.total_penalty(stack.values(xn))
            if s_n < s * (1.0 + 1e-12) + 1e-15 and s_n != s:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            return None
        x = xn
        if np.linalg.norm(x) > config.divergence_radius:
            raise FlowError("feasibility flow diverged")
    return x if stack.total_penalty(stack.values(x)) <= config.feasibility_tol else None


class FunctionOracle:
    """Adapter turning plain callables into a constraint/objective oracle."""

    def __init__(self, value: Callable, grad: Callable, affine=None):
        self._value = value
        self._grad = grad
        self.affine = affine

    def value(self, x) -> float:
        return float(self._value(x))

    def value_grad(self, x):
        return float(self._value(x)), np.asarray(self._grad(x), dtype=float)
