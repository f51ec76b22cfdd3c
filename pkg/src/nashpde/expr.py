"""A small arithmetic expression language with exact differentiation in ``y``.

Expressions describe the nonlinearity ``f(x, y)``, the player integrands
``L_k(x, y)`` and the scalar fields of a configuration file.  Variables are
``x1``, ``x2`` (space), ``y`` (state) and ``yd`` (a player's target field);
``pi`` is accepted as a named constant.  Powers take literal non-negative
integer exponents only, which keeps :func:`diff_y` closed.

Evaluation is vectorised over numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

VARIABLES = ("x1", "x2", "y", "yd")
CONSTANTS = {"pi": math.pi}
FUNCTIONS = ("sin", "cos", "exp", "tanh")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ExprDomainError(ExprError):
    pass


# --- syntax tree -----------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Pow, Call]


# --- parsing ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    source = source.replace("−", "-")
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[start]!r}", start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    # expr   := term (('+'|'-') term)*
    # term   := unary (('*'|'/') unary)*
    # unary  := ('-'|'+') unary | power
    # power  := atom ('^' integer)?
    # atom   := number | ident | func '(' expr ')' | '(' expr ')'

    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, pos = self.peek()
        if kind == "op" and text == "^":
            self.take()
            kind, text, pos = self.take()
            if kind != "num":
                raise ExprSyntaxError("exponent must be a non-negative integer literal", pos)
            if not re.fullmatch(r"\d+", text):
                raise ExprSyntaxError(f"non-integer exponent {text!r}", pos)
            if self.peek()[1] == "^":
                raise ExprSyntaxError("chained '^' is ambiguous; use parentheses", self.peek()[2])
            return Pow(base, int(text))
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            value = float(text)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"numeric literal {text!r} overflows", pos)
            return Num(value)
        if kind == "ident":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in VARIABLES:
                return Var(text)
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            raise UnknownIdentifierError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse(source: str) -> Expr:
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source).parse()


def as_expr(source: "str | float | Expr") -> Expr:
    if isinstance(source, (Num, Var, Neg, BinOp, Pow, Call)):
        return source
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        return Num(float(source))
    return parse(source)


# --- printing --------------------------------------------------------------

def to_string(e: Expr) -> str:
    """Render with full parenthesisation of non-atomic operands; re-parses exactly."""
    if isinstance(e, Num):
        return repr(e.value) if e.value >= 0 else f"({e.value!r})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    if isinstance(e, Pow):
        return f"({to_string(e.base)})^{e.exponent}"
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg, Call)):
        return variables(e.arg)
    if isinstance(e, Pow):
        return variables(e.base)
    return variables(e.left) | variables(e.right)


# --- differentiation -------------------------------------------------------

ZERO = Num(0.0)
ONE = Num(1.0)


def _is_num(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Num) and (value is None or e.value == value)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return ZERO
    if _is_num(b, 1.0):
        return a
    return BinOp("/", a, b)


def _neg(a: Expr) -> Expr:
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _pow(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    return Pow(a, n)


def diff(e: Expr, var: str = "y") -> Expr:
    """Exact symbolic derivative with respect to ``var``; other variables are constants."""
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return _neg(diff(e.arg, var))
    if isinstance(e, BinOp):
        da, db = diff(e.left, var), diff(e.right, var)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, e.right), _mul(e.left, db))
        # quotient rule
        num = _sub(_mul(da, e.right), _mul(e.left, db))
        return _div(num, _pow(e.right, 2))
    if isinstance(e, Pow):
        if e.exponent == 0:
            return ZERO
        return _mul(_mul(Num(float(e.exponent)), _pow(e.base, e.exponent - 1)), diff(e.base, var))
    if isinstance(e, Call):
        da = diff(e.arg, var)
        if _is_num(da, 0.0):
            return ZERO
        if e.func == "sin":
            outer = Call("cos", e.arg)
        elif e.func == "cos":
            outer = _neg(Call("sin", e.arg))
        elif e.func == "exp":
            outer = e
        else:  # tanh' = 1 - tanh^2
            outer = _sub(ONE, _pow(e, 2))
        return _mul(outer, da)
    raise TypeError(f"not an expression: {e!r}")


def diff_y(e: Expr) -> Expr:
    return diff(e, "y")


# --- evaluation ------------------------------------------------------------

_NUMPY_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}


def _eval(e: Expr, env: dict) -> np.ndarray | float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise ExprDomainError(f"variable {e.name!r} is not available here") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, BinOp):
        a, b = _eval(e.left, env), _eval(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0.0):
            raise ExprDomainError("division by zero")
        return a / b
    if isinstance(e, Pow):
        return _eval(e.base, env) ** e.exponent
    if isinstance(e, Call):
        return _NUMPY_FUNCS[e.func](_eval(e.arg, env))
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr, x=(), y=0.0, yd=0.0) -> np.ndarray | float:
    """Evaluate at spatial point(s) ``x`` (sequence of coordinate arrays), state ``y`` and target ``yd``.

    Inputs broadcast against each other.  Non-finite results raise
    :class:`ExprDomainError`.
    """
    env = {"y": np.asarray(y, dtype=float), "yd": np.asarray(yd, dtype=float)}
    for i, xi in enumerate(x):
        env[f"x{i + 1}"] = np.asarray(xi, dtype=float)
    with np.errstate(over="raise", divide="raise", invalid="raise", under="ignore"):
        try:
            out = _eval(e, env)
        except FloatingPointError as exc:
            raise ExprDomainError(str(exc)) from None
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        raise ExprDomainError("expression evaluated to a non-finite value")
    if out.ndim == 0:
        return float(out)
    return out


# keep the contract name available
eval = evaluate  # noqa: A001
