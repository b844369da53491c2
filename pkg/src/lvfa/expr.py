"""Time-dependent coefficient expressions.

A deliberately small, closed grammar for scalar functions of ``t``::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' ['-'] INTEGER)?
    atom   := NUMBER | 't' | FUNC '(' expr (',' expr)* ')' | '(' expr ')'

with ``FUNC`` one of sin, cos, exp, tanh, abs, min, max.  Parsed expressions
are compiled to plain Python (scalar) and numpy (vectorised) callables.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "EvaluationError",
    "BoundsInconsistencyError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "TimeFn",
    "parse_timefn",
    "parse",
    "pretty",
    "evaluate",
    "estimate_bounds",
]

BOUND_SLACK = 1e-12

UNARY_FUNCS = ("sin", "cos", "exp", "tanh", "abs")
NARY_FUNCS = ("min", "max")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class EvaluationError(ExprError, ArithmeticError):
    pass


class BoundsInconsistencyError(ExprError):
    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


# -- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


# -- tokenizer / parser -------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", _byte_offset(src, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), _byte_offset(src, pos)))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(src, len(src))))
    return tokens


def _byte_offset(src: str, pos: int) -> int:
    return len(src[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, value, offset = self.advance()
        if value != text or kind == "end":
            found = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", offset)

    def parse(self):
        node = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {value!r}", offset)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] != ("op", "^"):
            return base
        self.advance()
        sign = 1
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            sign = -1
        kind, value, offset = self.advance()
        if kind != "num":
            found = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected integer exponent, found {found}", offset)
        x = float(value)
        if not x.is_integer():
            raise ExprSyntaxError(f"non-integer exponent {value}", offset)
        if self.peek()[:2] == ("op", "^"):
            raise ExprSyntaxError("chained '^' needs parentheses", self.peek()[2])
        return Pow(base, sign * int(x))

    def atom(self):
        kind, value, offset = self.advance()
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            if value == "t":
                return Var()
            if value in UNARY_FUNCS or value in NARY_FUNCS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if value in UNARY_FUNCS and len(args) != 1:
                    raise ExprSyntaxError(f"{value} takes exactly one argument", offset)
                if value in NARY_FUNCS and len(args) < 2:
                    raise ExprSyntaxError(f"{value} takes at least two arguments", offset)
                return Call(value, tuple(args))
            raise UnknownIdentifierError(f"unknown identifier {value!r}", offset)
        if (kind, value) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(f"unexpected {found}", offset)


def parse(src: str):
    """Parse ``src`` into an AST; raises :class:`ExprSyntaxError`."""
    return _Parser(src).parse()


def pretty(node) -> str:
    """Fully parenthesised source that re-parses to an equal AST."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Neg):
        return f"(-{pretty(node.operand)})"
    if isinstance(node, BinOp):
        return f"({pretty(node.left)} {node.op} {pretty(node.right)})"
    if isinstance(node, Pow):
        return f"({pretty(node.base)})^{node.exponent}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(pretty(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# -- evaluation ---------------------------------------------------------------


def evaluate(node, t: float) -> float:
    """Tree-walking reference evaluator (the compiled paths must agree)."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(t)
    if isinstance(node, Neg):
        return -evaluate(node.operand, t)
    if isinstance(node, BinOp):
        lhs, rhs = evaluate(node.left, t), evaluate(node.right, t)
        if node.op == "+":
            return lhs + rhs
        if node.op == "-":
            return lhs - rhs
        if node.op == "*":
            return lhs * rhs
        return _div(lhs, rhs)
    if isinstance(node, Pow):
        return _pow(evaluate(node.base, t), node.exponent)
    if isinstance(node, Call):
        args = [evaluate(a, t) for a in node.args]
        return _SCALAR_FUNCS[node.name](*args)
    raise TypeError(f"not an expression node: {node!r}")


def _div(x: float, y: float) -> float:
    if y == 0.0:
        raise EvaluationError("division by zero")
    return x / y


def _pow(x: float, n: int) -> float:
    if n < 0 and x == 0.0:
        raise EvaluationError("division by zero in negative power")
    return x**n


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        raise EvaluationError(f"exp overflow at argument {x}") from None


_SCALAR_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": _exp,
    "tanh": math.tanh,
    "abs": abs,
    "min": min,
    "max": max,
}


def _codegen(node, backend: str) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Neg):
        return f"(-{_codegen(node.operand, backend)})"
    if isinstance(node, BinOp):
        lhs, rhs = _codegen(node.left, backend), _codegen(node.right, backend)
        if node.op == "/":
            return f"_div({lhs}, {rhs})"
        return f"({lhs} {node.op} {rhs})"
    if isinstance(node, Pow):
        return f"_pow({_codegen(node.base, backend)}, {node.exponent})"
    if isinstance(node, Call):
        args = ", ".join(_codegen(a, backend) for a in node.args)
        return f"_{node.name}({args})"
    raise TypeError(f"not an expression node: {node!r}")


def _np_div(x, y):
    y = np.asarray(y, dtype=float)
    if np.any(y == 0.0):
        raise EvaluationError("division by zero")
    return x / y


def _np_pow(x, n):
    x = np.asarray(x, dtype=float)
    if n < 0 and np.any(x == 0.0):
        raise EvaluationError("division by zero in negative power")
    return x**n


def _np_exp(x):
    with np.errstate(over="raise"):
        try:
            return np.exp(x)
        except FloatingPointError:
            raise EvaluationError("exp overflow") from None


def _np_reduce(fn):
    def reduce(*args):
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out

    return reduce


_SCALAR_NS = {f"_{k}": v for k, v in _SCALAR_FUNCS.items()} | {"_div": _div, "_pow": _pow}
_NUMPY_NS = {
    "_sin": np.sin,
    "_cos": np.cos,
    "_exp": _np_exp,
    "_tanh": np.tanh,
    "_abs": np.abs,
    "_min": _np_reduce(np.minimum),
    "_max": _np_reduce(np.maximum),
    "_div": _np_div,
    "_pow": _np_pow,
}


def _compile(node, backend: str) -> Callable:
    ns = dict(_SCALAR_NS if backend == "scalar" else _NUMPY_NS)
    ns["__builtins__"] = {}
    code = f"lambda t: {_codegen(node, backend)}"
    return eval(code, ns)  # noqa: S307 - generated from a closed AST


def _has_var(node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, Neg):
        return _has_var(node.operand)
    if isinstance(node, BinOp):
        return _has_var(node.left) or _has_var(node.right)
    if isinstance(node, Pow):
        return _has_var(node.base)
    return any(_has_var(a) for a in node.args)


@dataclass(frozen=True, eq=False)
class TimeFn:
    """A parsed coefficient ``f(t)`` with optional declared global bounds."""

    ast: object
    declared_inf: float | None = None
    declared_sup: float | None = None
    source: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_scalar", _compile(self.ast, "scalar"))
        object.__setattr__(self, "_vector", _compile(self.ast, "numpy"))
        const = None
        if not _has_var(self.ast):
            const = float(evaluate(self.ast, 0.0))
        object.__setattr__(self, "constant", const)

    def __call__(self, t: float) -> float:
        return float(self._scalar(t))

    def sample(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        out = self._vector(ts)
        return np.broadcast_to(np.asarray(out, dtype=float), ts.shape).copy()

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    @property
    def declared(self) -> bool:
        return self.declared_inf is not None or self.declared_sup is not None

    def __repr__(self):
        return f"TimeFn({self.source or pretty(self.ast)!r})"


def parse_timefn(src: str, declared_inf: float | None = None, declared_sup: float | None = None) -> TimeFn:
    """Parse ``src`` into a :class:`TimeFn`.

    >>> parse_timefn("2+sin(t)")(0.0)
    2.0
    """
    if declared_inf is not None and declared_sup is not None and declared_inf > declared_sup:
        raise ExprError(f"declared inf {declared_inf} exceeds declared sup {declared_sup}")
    return TimeFn(parse(src), declared_inf, declared_sup, src)


def estimate_bounds(f: TimeFn, window=(-200.0, 200.0), samples: int = 40001):
    """Return ``(inf_est, sup_est, source)`` with source ``"declared"`` or ``"sampled"``.

    Declared bounds are validated against the uniform sample grid first; a
    sample outside them raises :class:`BoundsInconsistencyError` naming ``t``.
    """
    if samples < 2:
        raise ValueError("samples must be at least 2")
    ts = np.linspace(window[0], window[1], samples)
    vals = f.sample(ts)
    if not np.all(np.isfinite(vals)):
        k = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise EvaluationError(f"non-finite value at t={ts[k]!r}")
    if f.declared:
        lo = -math.inf if f.declared_inf is None else f.declared_inf
        hi = math.inf if f.declared_sup is None else f.declared_sup
        bad = (vals < lo - BOUND_SLACK) | (vals > hi + BOUND_SLACK)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise BoundsInconsistencyError(
                f"{f!r} = {vals[k]!r} at t={ts[k]!r} lies outside declared [{lo}, {hi}]", float(ts[k])
            )
        inf_est = lo if f.declared_inf is not None else float(vals.min())
        sup_est = hi if f.declared_sup is not None else float(vals.max())
        return inf_est, sup_est, "declared"
    return float(vals.min()), float(vals.max()), "sampled"
