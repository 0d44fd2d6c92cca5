"""A small expression language for Lagrangians, constraints and metrics.

Grammar (``^`` binds tightest and is right-associative, then unary minus,
then ``* /``, then ``+ -``; both binary levels are left-associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Names matching the chart convention are variables: ``x1..xm`` (leaf
coordinates), ``xb1..xbn`` (transverse coordinates), ``y1..ym`` (leaf
velocities), ``yb1..ybn`` (transverse velocities) and ``t``.  Every other name
is a parameter.  Functions: ``sqrt sin cos tan exp log abs``.

Evaluation is generic over the scalar algebra: bind names to floats, numpy
arrays or :class:`~nonholo.scalar.Jet2` values and the result lives in the
same algebra.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Union

import numpy as np

from . import scalar
from .errors import DomainError, ExprError, ExprSyntaxError, UnboundNameError

__all__ = [
    "bind_params",
    "Expr", "Num", "Var", "Param", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Call",
    "FUNCTIONS", "parse", "to_source", "evaluate", "compile_expr", "diff",
    "free_names", "uses_nonsmooth", "NonSmoothWarning", "is_variable_name",
]

_VARIABLE = re.compile(r"^(?:(?:x|xb|y|yb)[1-9][0-9]*|t)$")


def is_variable_name(name: str) -> bool:
    return bool(_VARIABLE.match(name))


class NonSmoothWarning(UserWarning):
    """An expression uses a function that is not differentiable everywhere."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Div:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Param, Neg, Add, Sub, Mul, Div, Pow, Call]

FUNCTIONS: dict[str, Callable] = {
    "sqrt": scalar.sqrt,
    "sin": scalar.sin,
    "cos": scalar.cos,
    "tan": scalar.tan,
    "exp": scalar.exp,
    "log": scalar.log,
    "abs": scalar.absolute,
}
NONSMOOTH = frozenset({"abs"})

_BINARY = {"+": Add, "-": Sub, "*": Mul, "/": Div}

# -- parsing ------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while True:
        while pos < len(source) and source[pos].isspace():
            pos += 1
        if pos >= len(source):
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos, source)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExprSyntaxError(message, tok[2], self.source)

    def expect(self, text):
        tok = self.take()
        if tok[1] != text or tok[0] != "op":
            shown = "end of input" if tok[0] == "end" else repr(tok[1])
            raise self.error(f"expected {text!r}, found {shown}", tok)

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = _BINARY[op](node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = _BINARY[op](node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise self.error(f"unknown function {text!r}", tok)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            return Var(text) if is_variable_name(text) else Param(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        shown = "end of input" if kind == "end" else repr(text)
        raise self.error(f"unexpected {shown}", tok)


@lru_cache(maxsize=1024)
def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree."""
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0, source)
    p = _Parser(source)
    node = p.expr()
    if p.peek()[0] != "end":
        raise p.error(f"unexpected {p.peek()[1]!r}")
    return node


# -- printing -----------------------------------------------------------------

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}
_SYMBOL = {Add: "+", Sub: "-", Mul: "*", Div: "/", Pow: "^"}


def _prec(e) -> int:
    if isinstance(e, Num) and (e.value < 0 or str(e.value).startswith("-")):
        return 3  # printed with a leading minus, so it binds like Neg
    return _PREC.get(type(e), 5)


def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(e: Expr) -> str:
    """Render ``e`` with the minimum parentheses needed to parse back to ``e``."""

    def wrap(child, need):
        s = to_source(child)
        return f"({s})" if _prec(child) < need else s

    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    if isinstance(e, Neg):
        return "-" + wrap(e.arg, 3)
    if isinstance(e, Pow):
        return f"{wrap(e.left, 5)}^{wrap(e.right, 3)}"
    p = _PREC[type(e)]
    # left-associative: an equal-precedence right child needs parentheses
    return f"{wrap(e.left, p)}{_SYMBOL[type(e)]}{wrap(e.right, p + 1)}"


# -- evaluation -----------------------------------------------------------------


def _lookup(name):
    def f(env):
        try:
            return env[name]
        except KeyError:
            raise UnboundNameError(f"unbound name {name!r}") from None

    return f


@lru_cache(maxsize=4096)
def compile_expr(e: Expr) -> Callable[[Mapping], object]:
    """Compile ``e`` to a closure ``env -> scalar``."""
    if isinstance(e, Num):
        v = e.value
        return lambda env: v
    if isinstance(e, (Var, Param)):
        return _lookup(e.name)
    if isinstance(e, Neg):
        a = compile_expr(e.arg)
        return lambda env: -a(env)
    if isinstance(e, Call):
        fn = FUNCTIONS[e.func]
        a = compile_expr(e.arg)
        return lambda env: fn(a(env))
    left, right = compile_expr(e.left), compile_expr(e.right)
    if isinstance(e, Add):
        return lambda env: left(env) + right(env)
    if isinstance(e, Sub):
        return lambda env: left(env) - right(env)
    if isinstance(e, Mul):
        return lambda env: left(env) * right(env)
    if isinstance(e, Div):
        def div(env):
            num, den = left(env), right(env)
            if not isinstance(den, scalar.Jet2) and not isinstance(num, scalar.Jet2):
                if np.any(np.asarray(den) == 0):
                    raise DomainError("division by zero")
            return num / den
        return div
    if isinstance(e, Pow):
        if isinstance(e.right, Num):
            p = e.right.value
            return lambda env: _pow_const(left(env), p)
        return lambda env: _pow(left(env), right(env))
    raise ExprError(f"not an expression node: {e!r}")


def _pow_const(base, p):
    if isinstance(base, scalar.Jet2):
        return base ** p
    b = np.asarray(base, dtype=float)
    if not float(p).is_integer() and np.any(b < 0):
        raise DomainError(f"non-integer power {p} of a negative number")
    out = b ** p
    return out if out.shape else float(out)


def _pow(base, ex):
    if isinstance(base, scalar.Jet2) or isinstance(ex, scalar.Jet2):
        return base ** ex
    return _pow_const(base, ex) if np.ndim(ex) == 0 else np.power(base, ex)


def evaluate(e: Expr | str, env: Mapping):
    """Evaluate ``e`` with names bound by ``env``."""
    if isinstance(e, str):
        e = parse(e)
    return compile_expr(e)(env)


def bind_params(e: Expr, values: Mapping[str, float]) -> Expr:
    """Replace parameters by their values and fold constant subtrees."""
    if isinstance(e, Param):
        return Num(float(values[e.name])) if e.name in values else e
    if isinstance(e, (Num, Var)):
        return e
    if isinstance(e, (Neg, Call)):
        arg = bind_params(e.arg, values)
        out = Neg(arg) if isinstance(e, Neg) else Call(e.func, arg)
    else:
        out = type(e)(bind_params(e.left, values), bind_params(e.right, values))
    if all(isinstance(c, Num) for c in _children(out)):
        try:
            v = float(compile_expr(out)({}))
        except (DomainError, ArithmeticError, ValueError):
            return out
        if np.isfinite(v):
            return Num(v)
    return out


# -- analysis -------------------------------------------------------------------


def _children(e):
    if isinstance(e, (Num, Var, Param)):
        return ()
    if isinstance(e, (Neg, Call)):
        return (e.arg,)
    return (e.left, e.right)


def free_names(e: Expr) -> set[str]:
    if isinstance(e, (Var, Param)):
        return {e.name}
    out: set[str] = set()
    for c in _children(e):
        out |= free_names(c)
    return out


def uses_nonsmooth(e: Expr) -> bool:
    if isinstance(e, Call) and e.func in NONSMOOTH:
        return True
    return any(uses_nonsmooth(c) for c in _children(e))


def warn_if_nonsmooth(e: Expr, what: str) -> None:
    if uses_nonsmooth(e):
        warnings.warn(
            f"{what} uses abs(); derivatives are unreliable where its argument vanishes",
            NonSmoothWarning,
            stacklevel=3,
        )


# -- symbolic differentiation -------------------------------------------------------

_ZERO, _ONE = Num(0.0), Num(1.0)


def _add(a, b):
    if a == _ZERO:
        return b
    if b == _ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Add(a, b)


def _sub(a, b):
    if b == _ZERO:
        return a
    if a == _ZERO:
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Sub(a, b)


def _neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a, b):
    if a == _ZERO or b == _ZERO:
        return _ZERO
    if a == _ONE:
        return b
    if b == _ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Mul(a, b)


def _div(a, b):
    if a == _ZERO:
        return _ZERO
    if b == _ONE:
        return a
    return Div(a, b)


def _pow_e(a, b):
    if b == _ONE:
        return a
    if b == _ZERO:
        return _ONE
    return Pow(a, b)


def diff(e: Expr, name: str) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to the name ``name``."""
    if isinstance(e, Num):
        return _ZERO
    if isinstance(e, (Var, Param)):
        return _ONE if e.name == name else _ZERO
    if name not in free_names(e):
        return _ZERO
    if isinstance(e, Neg):
        return _neg(diff(e.arg, name))
    if isinstance(e, Add):
        return _add(diff(e.left, name), diff(e.right, name))
    if isinstance(e, Sub):
        return _sub(diff(e.left, name), diff(e.right, name))
    if isinstance(e, Mul):
        return _add(_mul(diff(e.left, name), e.right), _mul(e.left, diff(e.right, name)))
    if isinstance(e, Div):
        num = _sub(_mul(diff(e.left, name), e.right), _mul(e.left, diff(e.right, name)))
        return _div(num, _pow_e(e.right, Num(2.0)))
    if isinstance(e, Pow):
        u, v = e.left, e.right
        if name not in free_names(v):
            # d(u^v) = v u^(v-1) u'
            return _mul(_mul(v, _pow_e(u, _sub(v, _ONE))), diff(u, name))
        # general case via u^v = exp(v log u)
        inner = _add(_mul(diff(v, name), Call("log", u)), _div(_mul(v, diff(u, name)), u))
        return _mul(e, inner)
    if isinstance(e, Call):
        u = e.arg
        du = diff(u, name)
        f = e.func
        if f == "sqrt":
            outer = _div(Num(0.5), e)
        elif f == "sin":
            outer = Call("cos", u)
        elif f == "cos":
            outer = _neg(Call("sin", u))
        elif f == "tan":
            outer = _add(_ONE, _pow_e(e, Num(2.0)))
        elif f == "exp":
            outer = e
        elif f == "log":
            outer = _div(_ONE, u)
        elif f == "abs":
            outer = _div(u, e)
        else:  # pragma: no cover - parse() rejects unknown functions
            raise ExprError(f"unknown function {f!r}")
        return _mul(outer, du)
    raise ExprError(f"not an expression node: {e!r}")
