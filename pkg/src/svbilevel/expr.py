"""Scalar expression trees: parsing, evaluation, forward-mode differentiation.

Grammar (whitespace insignificant)::

    expr    ::= term (('+'|'-') term)*
    term    ::= factor (('*'|'/') factor)*
    factor  ::= '-' factor | power
    power   ::= atom ('^' integer)?
    atom    ::= number | ident | '(' expr ')'
              | 'max' '(' expr (',' expr)+ ')'
              | 'min' '(' expr (',' expr)+ ')'

min(...) is desugared to -max(-...) at parse time, so Max is the only
nonsmooth node.  Gradients of max nodes use the Clarke rule: the convex hull
of the active branch gradients, with the uniform average as the deterministic
selection.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_ACTIVE_TOL = 1e-9
MAX_UNROLLED_POW = 8


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(ExprError):
    """Division by zero or non-finite value during evaluation."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int
    name: str


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # '+', '-', '*', '/'
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Max:
    children: tuple


Expr = Const | Var | Neg | BinOp | Pow | Max


@dataclass(frozen=True)
class SubgradientBundle:
    """Clarke subdifferential sample: active branches, their gradients, and
    the deterministic selection (uniform average of the generators)."""

    active_indices: tuple
    generators: tuple  # of ndarray
    selection: np.ndarray


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"
    r"|(?P<ident>[A-Za-z][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            if src[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character {src[pos:].lstrip()[0]!r}", pos)
        if m.group("num") is not None:
            tokens.append(("num", m.group(0).strip(), m.start()))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start()))
        else:
            tokens.append(("op", m.group("op"), m.start()))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, variables: Sequence[str]):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.varmap = {name: k for k, name in enumerate(variables)}

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, pos = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                e = BinOp(val, e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                e = BinOp(val, e, self.factor())
            else:
                return e

    def factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            child = self.factor()
            if isinstance(child, Const):
                return Const(-child.value)
            return Neg(child)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.next()
            kind, val, pos = self.next()
            if kind != "num":
                raise ParseError("expected integer exponent after '^'", pos)
            if any(c in val for c in ".eE"):
                raise ParseError(f"non-integer exponent {val!r}", pos)
            return Pow(base, int(val))
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.next()
        if kind == "num":
            return Const(float(val))
        if kind == "ident":
            if val in ("max", "min"):
                self.expect_op("(")
                args = [self.expr()]
                while True:
                    k, v, p = self.peek()
                    if k == "op" and v == ",":
                        self.next()
                        args.append(self.expr())
                    else:
                        break
                self.expect_op(")")
                if len(args) < 2:
                    raise ParseError(f"{val} needs at least 2 arguments", pos)
                if val == "max":
                    return Max(tuple(args))
                # min(a, b, ...) == -max(-a, -b, ...)
                return Neg(Max(tuple(_negate(a) for a in args)))
            if val not in self.varmap:
                raise ParseError(f"undeclared variable {val!r}", pos)
            return Var(self.varmap[val], val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token {val!r}" if val else "unexpected end of input", pos)


def _negate(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(-e.value)
    if isinstance(e, Neg):
        return e.child
    return Neg(e)


def parse_expression(src: str, variables: Sequence[str]) -> Expr:
    """Parse ``src`` over the ordered variable list. Raises ParseError."""
    if not src or not src.strip():
        raise ParseError("empty expression", 0)
    return _Parser(src, variables).parse()


# ---------------------------------------------------------------------------
# Printing (round-trips through parse_expression)
# ---------------------------------------------------------------------------

def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return 1 if e.op in "+-" else 2
    if isinstance(e, Neg):
        return 3
    return 4


def to_source(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_source(e.child)
        if _prec(e.child) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        lp, rp = _prec(e.left), _prec(e.right)
        mine = _prec(e)
        left = to_source(e.left)
        right = to_source(e.right)
        if lp < mine:
            left = f"({left})"
        # right side needs parens at equal precedence for - and /
        if rp < mine or (rp == mine and e.op in "-/"):
            right = f"({right})"
        # also guard a+-b style output
        if e.op in "+-" and right.startswith("-"):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Pow):
        base = to_source(e.base)
        if _prec(e.base) < 4:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if isinstance(e, Max):
        return "max(" + ", ".join(to_source(c) for c in e.children) + ")"
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e: Expr) -> set:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, Neg):
        return free_variables(e.child)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Pow):
        return free_variables(e.base)
    if isinstance(e, Max):
        out = set()
        for c in e.children:
            out |= free_variables(c)
        return out
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation and forward-mode differentiation
# ---------------------------------------------------------------------------

def _check_finite(v: float, node: Expr) -> float:
    if not np.isfinite(v):
        raise EvaluationError(f"non-finite value at node {to_source(node)}")
    return v


def evaluate(e: Expr, point: Sequence[float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return float(point[e.index])
    if isinstance(e, Neg):
        return -evaluate(e.child, point)
    if isinstance(e, BinOp):
        a = evaluate(e.left, point)
        b = evaluate(e.right, point)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise EvaluationError(f"division by zero at node {to_source(e)}")
        return _check_finite(a / b, e)
    if isinstance(e, Pow):
        base = evaluate(e.base, point)
        return _check_finite(_ipow(base, e.exponent, e), e)
    if isinstance(e, Max):
        return max(evaluate(c, point) for c in e.children)
    raise TypeError(f"not an expression node: {e!r}")


def _ipow(base: float, k: int, node: Expr) -> float:
    if k < 0:
        if base == 0.0:
            raise EvaluationError(f"division by zero at node {to_source(node)}")
        return 1.0 / _ipow(base, -k, node)
    if k <= MAX_UNROLLED_POW:
        out = 1.0
        for _ in range(k):
            out *= base
        return out
    return float(base**k)


def active_average(values: Sequence[float], grads: Sequence[np.ndarray],
                   active_tol: float = DEFAULT_ACTIVE_TOL):
    """Clarke max rule helper: active set, its gradients, and their uniform
    average (a convex-hull element, the deterministic selection)."""
    top = max(values)
    active = [i for i, v in enumerate(values) if v >= top - active_tol]
    gens = [grads[i] for i in active]
    sel = sum(gens[1:], start=gens[0].copy()) / len(gens)
    return active, gens, sel


def value_and_gradient(e: Expr, point: np.ndarray,
                       active_tol: float = DEFAULT_ACTIVE_TOL):
    """Forward-mode evaluation: returns (value, gradient). Max nodes use the
    uniform average of active-branch gradients."""
    n = len(point)

    def rec(node: Expr):
        if isinstance(node, Const):
            return node.value, np.zeros(n)
        if isinstance(node, Var):
            g = np.zeros(n)
            g[node.index] = 1.0
            return float(point[node.index]), g
        if isinstance(node, Neg):
            v, g = rec(node.child)
            return -v, -g
        if isinstance(node, BinOp):
            av, ag = rec(node.left)
            bv, bg = rec(node.right)
            if node.op == "+":
                return av + bv, ag + bg
            if node.op == "-":
                return av - bv, ag - bg
            if node.op == "*":
                return av * bv, ag * bv + bg * av
            if bv == 0.0:
                raise EvaluationError(f"division by zero at node {to_source(node)}")
            v = av / bv
            return _check_finite(v, node), (ag - v * bg) / bv
        if isinstance(node, Pow):
            bv, bg = rec(node.base)
            k = node.exponent
            v = _ipow(bv, k, node)
            if k == 0:
                return 1.0, np.zeros(n)
            if bv == 0.0 and k < 0:
                raise EvaluationError(f"division by zero at node {to_source(node)}")
            dv = k * _ipow(bv, k - 1, node)
            return _check_finite(v, node), dv * bg
        if isinstance(node, Max):
            pairs = [rec(c) for c in node.children]
            vals = [p[0] for p in pairs]
            grads = [p[1] for p in pairs]
            _, _, sel = active_average(vals, grads, active_tol)
            return max(vals), sel
        raise TypeError(f"not an expression node: {node!r}")

    v, g = rec(e)
    return v, g


def clarke_subgradient(e: Expr, point: np.ndarray,
                       active_tol: float = DEFAULT_ACTIVE_TOL) -> SubgradientBundle:
    """Subgradient bundle at ``point``. For a root max node the generators are
    the gradients of the active branches; otherwise the single forward-mode
    gradient."""
    point = np.asarray(point, dtype=float)
    if isinstance(e, Max):
        pairs = [value_and_gradient(c, point, active_tol) for c in e.children]
        vals = [p[0] for p in pairs]
        grads = [p[1] for p in pairs]
        active, gens, sel = active_average(vals, grads, active_tol)
        if not all(np.all(np.isfinite(g)) for g in gens):
            raise EvaluationError("non-finite gradient in max branch")
        return SubgradientBundle(tuple(active), tuple(gens), sel)
    v, g = value_and_gradient(e, point, active_tol)
    if not np.all(np.isfinite(g)):
        raise EvaluationError("non-finite gradient")
    return SubgradientBundle((0,), (g,), g)


# ---------------------------------------------------------------------------
# Compilation (closures; hot path for the flow integrator)
# ---------------------------------------------------------------------------

def _compile_value(e: Expr) -> Callable:
    if isinstance(e, Const):
        c = e.value
        return lambda x: c
    if isinstance(e, Var):
        i = e.index
        return lambda x: x[i]
    if isinstance(e, Neg):
        f = _compile_value(e.child)
        return lambda x: -f(x)
    if isinstance(e, BinOp):
        fl = _compile_value(e.left)
        fr = _compile_value(e.right)
        if e.op == "+":
            return lambda x: fl(x) + fr(x)
        if e.op == "-":
            return lambda x: fl(x) - fr(x)
        if e.op == "*":
            return lambda x: fl(x) * fr(x)

        def div(x, fl=fl, fr=fr, node=e):
            b = fr(x)
            if b == 0.0:
                raise EvaluationError(f"division by zero at node {to_source(node)}")
            return fl(x) / b

        return div
    if isinstance(e, Pow):
        fb = _compile_value(e.base)
        k = e.exponent
        if k == 2:
            return lambda x: fb(x) ** 2
        return lambda x, fb=fb, k=k, node=e: _ipow(fb(x), k, node)
    if isinstance(e, Max):
        fs = [_compile_value(c) for c in e.children]
        return lambda x: max(f(x) for f in fs)
    raise TypeError(f"not an expression node: {e!r}")


class CompiledExpr:
    """An expression bound to a variable count, with cached closures for
    value and (value, gradient) evaluation."""

    def __init__(self, ast: Expr, n_vars: int, active_tol: float = DEFAULT_ACTIVE_TOL):
        self.ast = ast
        self.n_vars = n_vars
        self.active_tol = active_tol
        self._value = _compile_value(ast)
        aff = affine_parts(ast, n_vars)
        self.affine = aff  # (coeffs, const) or None

    def value(self, x) -> float:
        return float(self._value(x))

    def value_grad(self, x):
        if self.affine is not None:
            a, b = self.affine
            return float(a @ x + b), a.copy()
        return value_and_gradient(self.ast, np.asarray(x, dtype=float), self.active_tol)

    def grad(self, x) -> np.ndarray:
        return self.value_grad(x)[1]

    def value_generators(self, x, active_tol: float = None):
        """(value, [generator gradients]) with the active band widened to
        ``active_tol``; a single generator for smooth expressions."""
        tol = self.active_tol if active_tol is None else active_tol
        if isinstance(self.ast, Max):
            x = np.asarray(x, dtype=float)
            pairs = [value_and_gradient(c, x, tol) for c in self.ast.children]
            vals = [p[0] for p in pairs]
            grads = [p[1] for p in pairs]
            _, gens, _ = active_average(vals, grads, tol)
            return max(vals), list(gens)
        v, g = self.value_grad(x)
        return v, [g]


def _is_constant(e: Expr) -> bool:
    return not free_variables(e)


def is_affine(e: Expr) -> bool:
    if isinstance(e, (Const, Var)):
        return True
    if isinstance(e, Neg):
        return is_affine(e.child)
    if isinstance(e, BinOp):
        if e.op in "+-":
            return is_affine(e.left) and is_affine(e.right)
        if e.op == "*":
            return (_is_constant(e.left) and is_affine(e.right)) or (
                _is_constant(e.right) and is_affine(e.left))
        if e.op == "/":
            return is_affine(e.left) and _is_constant(e.right)
        return False
    if isinstance(e, Pow):
        return e.exponent in (0, 1) and is_affine(e.base) or _is_constant(e)
    if isinstance(e, Max):
        return False
    raise TypeError(f"not an expression node: {e!r}")


def affine_parts(e: Expr, n_vars: int):
    """(coefficients, constant) if the expression is affine, else None."""
    if not is_affine(e):
        return None
    zero = np.zeros(n_vars)
    const = evaluate(e, zero)
    _, coeffs = value_and_gradient(e, zero)
    return coeffs, const
