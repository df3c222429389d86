"""Small expression language for coefficient and field definitions.

Expressions are parsed into an immutable AST that evaluates on numpy arrays
of points and supports symbolic differentiation, so analytic fields get
exact gradients and manufactured sources can be generated mechanically.

Grammar (standard precedence, ``^`` right associative, unary minus binds
looser than ``^`` so ``-x^2 == -(x^2)``)::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := ('-' | '+') unary | power
    power := atom ('^' unary)?
    atom  := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "Expr",
    "ExprError",
    "Num",
    "Var",
    "BinOp",
    "Neg",
    "Call",
    "parse_expr",
    "evaluate_at",
]

COORDS = ("x", "y", "z")
ALIASES = {"x1": "x", "x2": "y", "x3": "z"}
DERIVED = ("r", "theta")
CONSTANTS = {"pi": math.pi, "e": math.e}

FUNCTIONS: dict[str, tuple[int, Callable]] = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "tan": (1, np.tan),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "sign": (1, np.sign),
    "sinh": (1, np.sinh),
    "cosh": (1, np.cosh),
    "tanh": (1, np.tanh),
    "atan2": (2, np.arctan2),
}


class ExprError(ValueError):
    """Raised for malformed expressions; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} at offset {position}"
        super().__init__(message)


class Expr:
    """Base class of AST nodes."""

    def __call__(self, points) -> np.ndarray:
        return evaluate_at(self, points)

    def evaluate(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def variables(self) -> set[str]:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.to_string()

    def to_string(self) -> str:
        raise NotImplementedError

    def gradient(self, dim: int) -> list["Expr"]:
        return [self.diff(v) for v in COORDS[:dim]]


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def evaluate(self, env):
        return np.float64(self.value)

    def diff(self, var):
        return ZERO

    def variables(self):
        return set()

    def to_string(self):
        if self.value < 0:
            return f"({self.value!r})"
        return repr(float(self.value))


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def evaluate(self, env):
        return env[self.name]

    def diff(self, var):
        if self.name == var:
            return ONE
        if self.name == "r":
            # d|x|/dx_i = x_i / r
            return div(Var(var), Var("r"))
        if self.name == "theta":
            if var == "x":
                return neg(div(Var("y"), Var("rxy2")))
            if var == "y":
                return div(Var("x"), Var("rxy2"))
            return ZERO
        if self.name == "rxy2":
            if var in ("x", "y"):
                return mul(Num(2.0), Var(var))
        return ZERO

    def variables(self):
        return {self.name}

    def to_string(self):
        if self.name == "rxy2":
            return "(x^2 + y^2)"
        return self.name


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        return np.power(a, b)

    def diff(self, var):
        a, b = self.left, self.right
        da, db = a.diff(var), b.diff(var)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        if self.op == "/":
            return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
        # power
        if isinstance(b, Num):
            if b.value == 0.0:
                return ZERO
            return mul(mul(Num(b.value), power(a, Num(b.value - 1.0))), da)
        # general u^v = exp(v log u)
        return mul(self, add(mul(db, Call("log", (a,))), div(mul(b, da), a)))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def to_string(self):
        return f"({self.left.to_string()} {self.op} {self.right.to_string()})"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def diff(self, var):
        return neg(self.arg.diff(var))

    def variables(self):
        return self.arg.variables()

    def to_string(self):
        return f"(-{self.arg.to_string()})"


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: tuple[Expr, ...]

    def evaluate(self, env):
        fn = FUNCTIONS[self.name][1]
        return fn(*(a.evaluate(env) for a in self.args))

    def diff(self, var):
        name = self.name
        if name == "atan2":
            a, b = self.args
            da, db = a.diff(var), b.diff(var)
            den = add(power(a, Num(2.0)), power(b, Num(2.0)))
            return div(sub(mul(b, da), mul(a, db)), den)
        (a,) = self.args
        da = a.diff(var)
        if isinstance(da, Num) and da.value == 0.0:
            return ZERO
        if name == "sin":
            outer = Call("cos", (a,))
        elif name == "cos":
            outer = neg(Call("sin", (a,)))
        elif name == "tan":
            outer = div(ONE, power(Call("cos", (a,)), Num(2.0)))
        elif name == "exp":
            outer = self
        elif name == "log":
            outer = div(ONE, a)
        elif name == "sqrt":
            outer = div(Num(0.5), self)
        elif name == "abs":
            outer = Call("sign", (a,))
        elif name == "sign":
            return ZERO
        elif name == "sinh":
            outer = Call("cosh", (a,))
        elif name == "cosh":
            outer = Call("sinh", (a,))
        elif name == "tanh":
            outer = sub(ONE, power(self, Num(2.0)))
        else:  # pragma: no cover - FUNCTIONS is closed
            raise ExprError(f"no derivative rule for {name}")
        return mul(outer, da)

    def variables(self):
        out: set[str] = set()
        for a in self.args:
            out |= a.variables()
        return out

    def to_string(self):
        return f"{self.name}({', '.join(a.to_string() for a in self.args)})"


ZERO = Num(0.0)
ONE = Num(1.0)


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Num) and e.value == v


# Folding constructors keep derivative trees small.
def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return ONE
    if _is(b, 1.0):
        return a
    return BinOp("^", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExprError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, src: str, allowed: set[str] | None):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value:
            what = "end of input" if kind == "end" else repr(text)
            raise ExprError(f"expected {value!r}, found {what}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected token {text!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

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
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise ExprError(f"unknown function {text!r}", pos)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text][0]
                if len(args) != arity:
                    raise ExprError(f"{text} takes {arity} argument(s), got {len(args)}", pos)
                return Call(text, tuple(args))
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            name = ALIASES.get(text, text)
            known = set(COORDS) | set(DERIVED)
            if name not in known or (self.allowed is not None and name not in self.allowed):
                raise ExprError(f"unknown identifier {text!r}", pos)
            return Var(name)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise ExprError("unexpected end of input", pos)
        raise ExprError(f"unexpected token {text!r}", pos)


def parse_expr(source: str, dim: int | None = None) -> Expr:
    """Parse ``source`` into an :class:`Expr`.

    With ``dim`` given, coordinates beyond the dimension (``z`` for ``dim=2``)
    are rejected as unknown identifiers.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprError("empty expression", 0)
    allowed = None
    if dim is not None:
        allowed = set(COORDS[:dim]) | set(DERIVED)
    return _Parser(source, allowed).parse()


def environment(points) -> dict[str, np.ndarray]:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts.shape[1]
    env = {c: pts[:, i] for i, c in enumerate(COORDS[:d])}
    for c in COORDS[d:]:
        env[c] = np.zeros(len(pts))
    env["r"] = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    env["rxy2"] = pts[:, 0] ** 2 + pts[:, 1] ** 2
    env["theta"] = np.arctan2(pts[:, 1], pts[:, 0])
    return env


def evaluate_at(e: Expr, points) -> np.ndarray:
    """Evaluate ``e`` at an ``(n, d)`` array of points; returns shape ``(n,)``."""
    env = environment(points)
    n = len(env["x"])
    with np.errstate(all="ignore"):
        out = e.evaluate(env)
    return np.broadcast_to(np.asarray(out, dtype=float), (n,)).copy()
