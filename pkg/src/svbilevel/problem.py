"""Bilevel problem representation, file format and constraint stacking.

A problem instance holds the upper objective h(x, y), the vector of lower
objectives f(x), lower-level constraints s(x) <= 0 defining X, coupling
constraints g(x, y) <= 0 and optional variable bounds.  The joint feasible
region is G = {(x, y) | x in X, y >= 0, g(x, y) <= 0}.

Problem file format (line oriented):

    vars x 2            dimensions (x required, y optional)
    vars y 2
    upper <expr>        h over x and y
    lower <expr>        one f_i per line, order = objective index
    constraint_x <expr> s_k <= 0, over x only
    constraint_xy <expr> g_j <= 0, over x and y
    bound x1 -1 2       optional box bound (use -inf/inf for one-sided)
    known <key> <vals>  optional reference values, ignored by the solver
    # comment

Variables are named x1..xn and y1..ym.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .expr import CompiledExpr, ExprError, parse_expression, to_source


class ProblemFormatError(Exception):
    """Raised for malformed problem files; carries the offending line."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class VariableBound:
    """Box bound on a single named variable; one-sided when lo/hi infinite."""
    name: str
    lo: float
    hi: float


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error", "warning" or "info"
    message: str

    def __str__(self):
        return f"{self.level}: {self.message}"


class AffineRow:
    """Constraint oracle for an affine row  a @ u + b <= 0."""

    def __init__(self, coeffs, const: float, label: str = ""):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.const = float(const)
        self.label = label
        self.affine = (self.coeffs, self.const)

    def value(self, u) -> float:
        return float(self.coeffs @ u + self.const)

    def value_grad(self, u):
        return self.value(u), self.coeffs.copy()


class LiftedExpr:
    """An x-only compiled expression viewed as a function of u = (x, y)."""

    def __init__(self, inner: CompiledExpr, n: int, total: int, label: str = ""):
        self.inner = inner
        self.n = n
        self.total = total
        self.label = label
        if inner.affine is not None:
            a, b = inner.affine
            coeffs = np.zeros(total)
            coeffs[:n] = a
            self.affine = (coeffs, b)
        else:
            self.affine = None

    def value(self, u) -> float:
        return self.inner.value(u[: self.n])

    def value_grad(self, u):
        v, g = self.inner.value_grad(u[: self.n])
        out = np.zeros(self.total)
        out[: self.n] = g
        return v, out


class ShiftedRow:
    """Oracle for  base(u) - shift <= 0  (used for the f_i(x) <= z_i rows)."""

    def __init__(self, base, shift: float, label: str = ""):
        self.base = base
        self.shift = float(shift)
        self.label = label
        aff = getattr(base, "affine", None)
        if aff is not None:
            self.affine = (aff[0], aff[1] - self.shift)
        else:
            self.affine = None

    def value(self, u) -> float:
        return self.base.value(u) - self.shift

    def value_grad(self, u):
        v, g = self.base.value_grad(u)
        return v - self.shift, g


@dataclass(frozen=True)
class BilevelProblem:
    """Immutable (BP) instance with compiled oracles."""

    n: int
    m: int
    upper: CompiledExpr
    lower: tuple
    lower_constraints: tuple
    coupling: tuple
    bounds: tuple = ()
    known: dict = field(default_factory=dict)
    source_name: str = "<text>"

    @property
    def p(self) -> int:
        return len(self.lower)

    @property
    def q(self) -> int:
        return len(self.lower_constraints)

    @property
    def ell(self) -> int:
        return len(self.coupling)

    @property
    def x_names(self):
        return [f"x{i + 1}" for i in range(self.n)]

    @property
    def y_names(self):
        return [f"y{j + 1}" for j in range(self.m)]

    def bound_rows_x(self):
        """Affine s-rows over x derived from bounds on x-variables."""
        rows = []
        for b in self.bounds:
            if not b.name.startswith("x"):
                continue
            i = int(b.name[1:]) - 1
            e = np.zeros(self.n)
            if np.isfinite(b.lo):
                e_lo = e.copy()
                e_lo[i] = -1.0
                rows.append(AffineRow(e_lo, b.lo, f"{b.name} >= {b.lo}"))
            if np.isfinite(b.hi):
                e_hi = e.copy()
                e_hi[i] = 1.0
                rows.append(AffineRow(e_hi, -b.hi, f"{b.name} <= {b.hi}"))
        return rows

    def bound_rows_y(self):
        """Affine rows over u from explicit bounds on y-variables (beyond the
        implicit y >= 0)."""
        total = self.n + self.m
        rows = []
        for b in self.bounds:
            if not b.name.startswith("y"):
                continue
            j = self.n + int(b.name[1:]) - 1
            if np.isfinite(b.lo):
                e = np.zeros(total)
                e[j] = -1.0
                rows.append(AffineRow(e, b.lo, f"{b.name} >= {b.lo}"))
            if np.isfinite(b.hi):
                e = np.zeros(total)
                e[j] = 1.0
                rows.append(AffineRow(e, -b.hi, f"{b.name} <= {b.hi}"))
        return rows

    def x_region(self):
        """Oracle list over x defining X: declared s-rows then x-bound rows."""
        return list(self.lower_constraints) + self.bound_rows_x()


class FeasibleRegionG:
    """The joint region G over u = (x, y)."""

    def __init__(self, problem: BilevelProblem):
        self.problem = problem
        n, m = problem.n, problem.m
        total = n + m
        rows = [LiftedExpr(s, n, total, f"s_{k + 1}")
                for k, s in enumerate(problem.lower_constraints)]
        rows += [LiftedExpr(r, n, total, r.label) if m else r
                 for r in problem.bound_rows_x()]
        for j in range(m):
            e = np.zeros(total)
            e[n + j] = -1.0
            rows.append(AffineRow(e, 0.0, f"y{j + 1} >= 0"))
        rows += problem.bound_rows_y()
        rows += [problem.coupling[j] for j in range(problem.ell)]
        self.rows = rows

    def values(self, u) -> np.ndarray:
        return np.array([r.value(u) for r in self.rows])

    def membership(self, u, tol: float = 1e-9) -> bool:
        vals = self.values(u)
        return bool(np.max(vals) <= tol) if len(vals) else True


def stacked_mp_constraints(problem: BilevelProblem, z) -> list:
    """Ordered oracle list over u = (x, y) for the region
    {u in G | f(x) <= z}: s-rows (declared then bound-derived), -y rows,
    f_i(x) - z_i rows, then g-rows."""
    z = np.asarray(z, dtype=float)
    if len(z) != problem.p:
        raise ValueError(f"z has length {len(z)}, expected p = {problem.p}")
    n, m = problem.n, problem.m
    total = n + m

    def lift(c, label):
        return LiftedExpr(c, n, total, label) if m else c

    rows = [lift(s, f"s_{k + 1}")
            for k, s in enumerate(problem.lower_constraints)]
    rows += [lift(r, r.label) for r in problem.bound_rows_x()]
    for j in range(m):
        e = np.zeros(total)
        e[n + j] = -1.0
        rows.append(AffineRow(e, 0.0, f"y{j + 1} >= 0"))
    rows += problem.bound_rows_y()
    for i, f in enumerate(problem.lower):
        rows.append(ShiftedRow(lift(f, f"f_{i + 1}"), z[i], f"f_{i + 1} - z_{i + 1}"))
    rows += list(problem.coupling)
    return rows


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def _parse_float(tok: str, line_no: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ProblemFormatError(f"not a number: {tok!r}", line_no)


def load_problem(source: Union[str, os.PathLike]) -> BilevelProblem:
    """Parse a problem from a file path or from literal text (anything
    containing a newline is treated as text)."""
    name = "<text>"
    if isinstance(source, os.PathLike):
        name = os.fspath(source)
        with open(source) as fh:
            text = fh.read()
    elif isinstance(source, str) and "\n" not in source and os.path.exists(source):
        name = source
        with open(source) as fh:
            text = fh.read()
    elif isinstance(source, str):
        text = source
    else:
        raise TypeError(f"unsupported source: {source!r}")

    n = m = None
    raw = {"upper": [], "lower": [], "constraint_x": [], "constraint_xy": []}
    bounds = []
    known = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        key = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        if key == "vars":
            toks = rest.split()
            if len(toks) != 2 or toks[0] not in ("x", "y"):
                raise ProblemFormatError("expected 'vars x|y <count>'", line_no)
            try:
                count = int(toks[1])
            except ValueError:
                raise ProblemFormatError(f"bad count {toks[1]!r}", line_no)
            if count < 0:
                raise ProblemFormatError("negative dimension", line_no)
            if toks[0] == "x":
                n = count
            else:
                m = count
        elif key in raw:
            if not rest:
                raise ProblemFormatError(f"'{key}' needs an expression", line_no)
            raw[key].append((line_no, rest))
        elif key == "bound":
            toks = rest.split()
            if len(toks) != 3:
                raise ProblemFormatError("expected 'bound <var> <lo> <hi>'", line_no)
            bounds.append((line_no, toks[0],
                           _parse_float(toks[1], line_no),
                           _parse_float(toks[2], line_no)))
        elif key == "known":
            toks = rest.split()
            if not toks:
                raise ProblemFormatError("'known' needs a key", line_no)
            vals = [_parse_float(t, line_no) for t in toks[1:]]
            known[toks[0]] = vals[0] if len(vals) == 1 else vals
        else:
            raise ProblemFormatError(f"unknown directive {key!r}", line_no)

    if n is None:
        raise ProblemFormatError("missing 'vars x' declaration")
    if n < 1:
        raise ProblemFormatError("need at least one x variable")
    if m is None:
        m = 0
    if len(raw["upper"]) != 1:
        raise ProblemFormatError(
            f"exactly one 'upper' line required, found {len(raw['upper'])}")
    if not raw["lower"]:
        raise ProblemFormatError("at least one 'lower' objective required")

    x_names = [f"x{i + 1}" for i in range(n)]
    xy_names = x_names + [f"y{j + 1}" for j in range(m)]

    def compile_exprs(entries, variables):
        out = []
        for line_no, src in entries:
            try:
                ast = parse_expression(src, variables)
            except ExprError as exc:
                raise ProblemFormatError(str(exc), line_no)
            out.append(CompiledExpr(ast, len(variables)))
        return out

    upper = compile_exprs(raw["upper"], xy_names)[0]
    lower = compile_exprs(raw["lower"], x_names)
    s_rows = compile_exprs(raw["constraint_x"], x_names)
    g_rows = compile_exprs(raw["constraint_xy"], xy_names)

    valid_names = set(xy_names)
    checked_bounds = []
    for line_no, var, lo, hi in bounds:
        if var not in valid_names:
            raise ProblemFormatError(f"unknown variable {var!r} in bound", line_no)
        if lo > hi:
            raise ProblemFormatError(f"empty bound [{lo}, {hi}]", line_no)
        checked_bounds.append(VariableBound(var, lo, hi))

    return BilevelProblem(
        n=n, m=m, upper=upper, lower=tuple(lower),
        lower_constraints=tuple(s_rows), coupling=tuple(g_rows),
        bounds=tuple(checked_bounds), known=known, source_name=name)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(problem: BilevelProblem, probe_boundedness: bool = True,
             probe_radius: float = 1e6) -> list:
    """Structural diagnostics: hard errors for shape violations, warnings for
    unverifiable convexity assumptions, a numeric probe for boundedness of X."""
    from . import neurodynamic as nd

    out = []
    if problem.p < 2:
        out.append(Diagnostic("error", "lower level must be vectorial (p >= 2)"))
    if problem.q == 0 and not problem.bound_rows_x():
        out.append(Diagnostic("error", "X has no constraints; it cannot be bounded"))
    if problem.m == 0:
        out.append(Diagnostic("info", "no y variables declared"))
    if problem.ell == 0:
        out.append(Diagnostic("info", "no coupling constraints declared"))
    out.append(Diagnostic(
        "warning",
        "pseudoconvexity of the objectives and quasiconvexity of the "
        "constraints are assumed, not verified; fractional-quadratic and "
        "max-of-affine forms are standard sufficient conditions"))

    if probe_boundedness and problem.p >= 1:
        region = problem.x_region()
        # long horizon so escape to the radius is reachable before t_max
        cfg = nd.FlowConfig(divergence_radius=probe_radius, t_max=1e9)
        x0 = find_interior_start(problem, cfg)
        if x0 is None:
            out.append(Diagnostic("error", "could not find a point of X"))
            return out
        for i in range(problem.n):
            for sign in (1.0, -1.0):
                coeffs = np.zeros(problem.n)
                coeffs[i] = sign
                obj = AffineRow(coeffs, 0.0)
                res = nd.solve_flow(obj, region, x0, cfg)
                if res.status is nd.FlowStatus.DIVERGED:
                    direction = "below" if sign > 0 else "above"
                    out.append(Diagnostic(
                        "warning",
                        f"X appears unbounded ({'x%d' % (i + 1)} unbounded "
                        f"{direction})"))
                    break
    return out


def find_interior_start(problem: BilevelProblem, config=None) -> Optional[np.ndarray]:
    """A feasible point of X, from the origin (or bound midpoints) via
    penalty descent."""
    from . import neurodynamic as nd

    if config is None:
        config = nd.FlowConfig()
    x0 = np.zeros(problem.n)
    for b in problem.bounds:
        if b.name.startswith("x"):
            i = int(b.name[1:]) - 1
            lo = b.lo if np.isfinite(b.lo) else 0.0
            hi = b.hi if np.isfinite(b.hi) else lo + 2.0
            x0[i] = 0.5 * (lo + hi)
    return nd.find_feasible(problem.x_region(), x0, config)
