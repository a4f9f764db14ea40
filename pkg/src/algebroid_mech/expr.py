"""Scalar expression language with second-order forward-mode differentiation.

Expressions are parsed from a small infix grammar::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := '-' unary | power
    power := atom ('^' unary)?
    atom  := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

``^`` is right-associative and binds tighter than unary minus, so ``-x^2``
is ``-(x^2)``.  Evaluation works on plain floats or on :class:`Jet` values,
which carry a gradient and Hessian with respect to a chosen list of seed
variables.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    EmptyExpressionError,
    ExprSyntaxError,
    InputError,
    UnboundVariableError,
    UnknownFunctionError,
)

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")


# ---------------------------------------------------------------- AST nodes

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    arg: object


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_UNARY_PREC = 3
_ATOM_PREC = 5


def _prec(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _UNARY_PREC
    if isinstance(node, Num) and node.value < 0:
        return _UNARY_PREC
    return _ATOM_PREC


def _format_number(v):
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


def _to_str(node):
    if isinstance(node, Num):
        s = _format_number(abs(node.value))
        return "-" + s if node.value < 0 else s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({_to_str(node.arg)})"
    if isinstance(node, Neg):
        inner = _to_str(node.arg)
        if _prec(node.arg) < _UNARY_PREC:
            inner = f"({inner})"
        return "-" + inner
    p = _PREC[node.op]
    left, right = _to_str(node.left), _to_str(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < p:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def _free_vars(node, out, seen=None):
    seen = set() if seen is None else seen
    if id(node) in seen:
        return out
    seen.add(id(node))
    if isinstance(node, Var):
        if node.name not in out:
            out.append(node.name)
    elif isinstance(node, (Neg, Call)):
        _free_vars(node.arg, out, seen)
    elif isinstance(node, BinOp):
        _free_vars(node.left, out, seen)
        _free_vars(node.right, out, seen)
    return out


def _children(node):
    if isinstance(node, (Neg, Call)):
        return (node.arg,)
    if isinstance(node, BinOp):
        return (node.left, node.right)
    return ()


def _shared_nodes(root):
    """Ids of nodes reachable along more than one path from ``root``."""
    seen, shared, stack = set(), set(), [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            shared.add(id(node))
            continue
        seen.add(id(node))
        stack.extend(_children(node))
    return shared


# ------------------------------------------------------------------- parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None or m.lastgroup is None:
            if source[pos:].strip() == "":
                break
            bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}",
                                  len(source[:bad].encode()))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), len(source[:start].encode())))
        pos = m.end()
    tokens.append(("eof", "", len(source.encode())))
    return tokens


class _Parser:
    def __init__(self, source):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, value, offset = self.take()
        if value != text:
            found = "end of input" if kind == "eof" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", offset)

    def parse(self):
        node = self.expr()
        kind, value, offset = self.peek()
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected token {value!r}", offset)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            operand = self.unary()
            if isinstance(operand, Num):
                return Num(-operand.value)
            return Neg(operand)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, value, offset = self.take()
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if value not in FUNCTIONS:
                    raise UnknownFunctionError(value, offset)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            if value in FUNCTIONS:
                raise ExprSyntaxError(f"function {value!r} needs a parenthesised argument", self.peek()[2])
            return Var(value)
        if (kind, value) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "eof" else repr(value)
        raise ExprSyntaxError(f"unexpected {found}", offset)


# --------------------------------------------------------------------- jets

class Jet:
    """Value, gradient and Hessian of a scalar with respect to seed variables.

    ``H`` is ``None`` when the Hessian is identically zero (linear jets), which
    saves most of the cost for the quadratic Lagrangians used in mechanics.
    """

    __slots__ = ("v", "g", "H")

    def __init__(self, v, g, H=None):
        self.v = v
        self.g = g
        self.H = H

    def _hess(self):
        return np.zeros((len(self.g), len(self.g))) if self.H is None else self.H

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.v + other.v, self.g + other.g, _hsum(self.H, other.H))
        return Jet(self.v + other, self.g, self.H)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.g, None if self.H is None else -self.H)

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.v - other.v, self.g - other.g,
                       _hsum(self.H, None if other.H is None else -other.H))
        return Jet(self.v - other, self.g, self.H)

    def __rsub__(self, other):
        return Jet(other - self.v, -self.g, None if self.H is None else -self.H)

    def __mul__(self, other):
        if isinstance(other, Jet):
            o = self.g[:, None] * other.g
            H = o + o.T
            if self.H is not None:
                H = H + other.v * self.H
            if other.H is not None:
                H = H + self.v * other.H
            return Jet(self.v * other.v, self.v * other.g + other.v * self.g, H)
        return Jet(self.v * other, self.g * other,
                   None if self.H is None else self.H * other)

    __rmul__ = __mul__

    def unary(self, f0, f1, f2):
        """Compose with a scalar function given its value and two derivatives."""
        H = f2 * (self.g[:, None] * self.g) if f2 != 0.0 else None
        if self.H is not None:
            H = f1 * self.H if H is None else H + f1 * self.H
        return Jet(f0, f1 * self.g, H)


def _hsum(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _val(a):
    return a.v if isinstance(a, Jet) else a


@dataclass(frozen=True)
class SecondOrderJet:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    seed_vars: tuple = ()


@dataclass(frozen=True)
class EvalContext:
    bindings: Mapping[str, float]
    seed_vars: tuple = ()


# ----------------------------------------------------------- function table

def _sin(a, text):
    if isinstance(a, Jet):
        s, c = math.sin(a.v), math.cos(a.v)
        return a.unary(s, c, -s)
    return math.sin(a)


def _cos(a, text):
    if isinstance(a, Jet):
        s, c = math.sin(a.v), math.cos(a.v)
        return a.unary(c, -s, -c)
    return math.cos(a)


def _tan(a, text):
    if math.cos(_val(a)) == 0.0:
        raise DomainError("tan at a pole", text)
    if isinstance(a, Jet):
        t = math.tan(a.v)
        return a.unary(t, 1.0 + t * t, 2.0 * t * (1.0 + t * t))
    return math.tan(a)


def _exp(a, text):
    try:
        e = math.exp(_val(a))
    except OverflowError:
        raise DomainError("exp overflow", text) from None
    return a.unary(e, e, e) if isinstance(a, Jet) else e


def _log(a, text):
    v = _val(a)
    if v <= 0.0:
        raise DomainError(f"log of non-positive value {v!r}", text)
    if isinstance(a, Jet):
        return a.unary(math.log(v), 1.0 / v, -1.0 / (v * v))
    return math.log(v)


def _sqrt(a, text):
    v = _val(a)
    if v < 0.0:
        raise DomainError(f"sqrt of negative value {v!r}", text)
    if isinstance(a, Jet):
        if v == 0.0:
            raise DomainError("sqrt is not differentiable at 0", text)
        s = math.sqrt(v)
        return a.unary(s, 0.5 / s, -0.25 / (s * v))
    return math.sqrt(v)


def _abs(a, text):
    v = _val(a)
    if isinstance(a, Jet):
        if v == 0.0:
            raise DomainError("abs is not differentiable at 0", text)
        return a.unary(abs(v), math.copysign(1.0, v), 0.0)
    return abs(v)


_FUNC_IMPL = {"sin": _sin, "cos": _cos, "tan": _tan, "exp": _exp,
              "log": _log, "sqrt": _sqrt, "abs": _abs}


def _recip(b, text):
    v = _val(b)
    if v == 0.0:
        raise DomainError("division by zero", text)
    if isinstance(b, Jet):
        r = 1.0 / v
        return b.unary(r, -r * r, 2.0 * r * r * r)
    return 1.0 / v


def _pow(a, b, text):
    try:
        return _pow_raw(a, b, text)
    except OverflowError:
        raise DomainError("power overflow", text) from None


def _pow_raw(a, b, text):
    if not isinstance(b, Jet):
        p = float(b)
        v = _val(a)
        if p == int(p):
            k = int(p)
            if v == 0.0 and k < 0:
                raise DomainError("division by zero", text)
            if not isinstance(a, Jet):
                return v ** k
            if k == 0:
                return 1.0
            if k == 1:
                return a
            f1 = k * v ** (k - 1)
            f2 = k * (k - 1) * v ** (k - 2) if (k != 2) else 2.0
            return a.unary(v ** k, f1, f2)
        if v < 0.0 or (v == 0.0 and p < 0.0):
            raise DomainError(f"non-integer power of value {v!r}", text)
        if not isinstance(a, Jet):
            return v ** p
        if v == 0.0 and p < 2.0:
            raise DomainError("power is not twice differentiable at 0", text)
        return a.unary(v ** p, p * v ** (p - 1.0), p * (p - 1.0) * v ** (p - 2.0))
    # variable exponent: a^b = exp(b log a)
    v = _val(a)
    if v <= 0.0:
        raise DomainError(f"variable power of non-positive base {v!r}", text)
    r = _exp(b * _log(a, text), text)
    exact = v ** _val(b)  # pow is correctly rounded where exp(b log a) is not
    if isinstance(r, Jet):
        return Jet(exact, r.g, r.H)
    return exact


# ----------------------------------------------------------------- compiler

class _Text:
    """Printed form of a node, rendered only when an error needs it."""

    __slots__ = ("node",)

    def __init__(self, node):
        self.node = node

    def __str__(self):
        return _to_str(self.node)

def _compile(root) -> Callable:
    """Closure evaluating ``root`` at a binding dict.

    Subtrees reachable along several paths are compiled once and remember
    their value for the current binding dict, so evaluation cost follows the
    number of distinct nodes.  The returned closure copies its argument, which
    makes every call see a fresh dict.
    """
    shared = _shared_nodes(root)
    memo = {}

    def rec(node):
        fn = memo.get(id(node))
        if fn is None:
            fn = _compile_node(node, rec)
            if id(node) in shared:
                fn = _remember_last(fn)
            memo[id(node)] = fn
        return fn

    top = rec(root)
    if not shared:
        return top
    return lambda env: top(dict(env))


def _remember_last(fn):
    last = [(None, None)]

    def cached(env):
        prev = last[0]
        if prev[0] is env:
            return prev[1]
        value = fn(env)
        last[0] = (env, value)
        return value
    return cached


def _compile_node(node, rec) -> Callable:
    if isinstance(node, Num):
        value = node.value
        return lambda env: value
    if isinstance(node, Var):
        name = node.name

        def var(env):
            try:
                return env[name]
            except KeyError:
                raise UnboundVariableError(name) from None
        return var
    if isinstance(node, Neg):
        f = rec(node.arg)
        return lambda env: -f(env)
    if isinstance(node, Call):
        f = rec(node.arg)
        impl = _FUNC_IMPL[node.func]
        text = _Text(node)
        return lambda env: impl(f(env), text)
    lf, rf = rec(node.left), rec(node.right)
    op = node.op
    if op == "+":
        return lambda env: _add(lf(env), rf(env))
    if op == "-":
        return lambda env: _sub(lf(env), rf(env))
    if op == "*":
        return lambda env: _mul(lf(env), rf(env))
    text = _Text(node)
    if op == "/":
        return lambda env: _div(lf(env), rf(env), text)
    return lambda env: _pow(lf(env), rf(env), text)


# Python dispatches float+Jet through Jet.__radd__, but float+float must not
# go through numpy, so these helpers only exist to keep the closures uniform.
def _add(a, b):
    return a + b


def _sub(a, b):
    return a - b


def _mul(a, b):
    return a * b


def _div(a, b, text):
    if isinstance(a, Jet) or isinstance(b, Jet):
        return a * _recip(b, text)
    if b == 0.0:
        raise DomainError("division by zero", text)
    return a / b


# ------------------------------------------------------- symbolic utilities

def _num(v):
    return Num(float(v))


def _is_num(node, value=None):
    return isinstance(node, Num) and (value is None or node.value == value)


def _make_add(a, b):
    if _is_num(a) and _is_num(b):
        return _num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return BinOp("+", a, b)


def _make_sub(a, b):
    if _is_num(a) and _is_num(b):
        return _num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _make_neg(b)
    return BinOp("-", a, b)


def _make_mul(a, b):
    if _is_num(a) and _is_num(b):
        return _num(a.value * b.value)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a, -1.0):
        return _make_neg(b)
    if _is_num(b, -1.0):
        return _make_neg(a)
    return BinOp("*", a, b)


def _make_div(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(a, 0.0) and not _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a) and _is_num(b) and b.value != 0.0:
        return _num(a.value / b.value)
    return BinOp("/", a, b)


def _make_pow(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return Num(1.0)
    return BinOp("^", a, b)


def _make_neg(a):
    if _is_num(a):
        return _num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _diff(node, var, memo=None):
    memo = {} if memo is None else memo
    hit = memo.get(id(node))
    if hit is None:
        hit = memo[id(node)] = _diff_node(node, var, memo)
    return hit


def _diff_node(node, var, memo):
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if node.name == var else 0.0)
    if isinstance(node, Neg):
        return _make_neg(_diff(node.arg, var, memo))
    if isinstance(node, Call):
        u = node.arg
        du = _diff(u, var, memo)
        if _is_num(du, 0.0):
            return Num(0.0)
        f = node.func
        if f == "sin":
            outer = Call("cos", u)
        elif f == "cos":
            outer = _make_neg(Call("sin", u))
        elif f == "tan":
            outer = _make_add(Num(1.0), _make_pow(node, Num(2.0)))
        elif f == "exp":
            outer = node
        elif f == "log":
            outer = _make_div(Num(1.0), u)
        elif f == "sqrt":
            outer = _make_div(Num(0.5), node)
        else:  # abs
            outer = _make_div(u, node)
        return _make_mul(outer, du)
    a, b = node.left, node.right
    da, db = _diff(a, var, memo), _diff(b, var, memo)
    if node.op == "+":
        return _make_add(da, db)
    if node.op == "-":
        return _make_sub(da, db)
    if node.op == "*":
        return _make_add(_make_mul(da, b), _make_mul(a, db))
    if node.op == "/":
        return _make_sub(_make_div(da, b),
                         _make_div(_make_mul(a, db), _make_pow(b, Num(2.0))))
    # power
    if _is_num(db, 0.0):
        if _is_num(da, 0.0):
            return Num(0.0)
        return _make_mul(_make_mul(b, _make_pow(a, _make_sub(b, Num(1.0)))), da)
    # general: d(a^b) = a^b (db log a + b da / a)
    return _make_mul(node, _make_add(_make_mul(db, Call("log", a)),
                                     _make_div(_make_mul(b, da), a)))


def _substitute(node, mapping, memo=None):
    memo = {} if memo is None else memo
    hit = memo.get(id(node))
    if hit is None:
        hit = memo[id(node)] = _substitute_node(node, mapping, memo)
    return hit


def _substitute_node(node, mapping, memo):
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, Num):
        return node
    if isinstance(node, Neg):
        return _make_neg(_substitute(node.arg, mapping, memo))
    if isinstance(node, Call):
        arg = _substitute(node.arg, mapping, memo)
        if isinstance(arg, Num):
            return _num(_FUNC_IMPL[node.func](arg.value, node.func))
        return Call(node.func, arg)
    left = _substitute(node.left, mapping, memo)
    right = _substitute(node.right, mapping, memo)
    return {"+": _make_add, "-": _make_sub, "*": _make_mul,
            "/": _make_div, "^": _make_pow}[node.op](left, right)


# --------------------------------------------------------------------- Expr

class Expr:
    """Immutable parsed expression.

    Supports evaluation at float bindings, jet evaluation, pretty-printing
    (``str(e)`` parses back to an equivalent tree), arithmetic with other
    expressions or numbers, symbolic differentiation and substitution.
    """

    __slots__ = ("node", "free_vars", "_compiled")

    def __init__(self, node):
        object.__setattr__(self, "node", node)
        object.__setattr__(self, "free_vars", tuple(_free_vars(node, [])))
        object.__setattr__(self, "_compiled", None)

    @property
    def _fn(self):
        # compiled on first use; intermediate results of arithmetic never are
        if self._compiled is None:
            object.__setattr__(self, "_compiled", _compile(self.node))
        return self._compiled

    def __setattr__(self, name, value):
        raise AttributeError("Expr is immutable")

    @classmethod
    def const(cls, value):
        return cls(_num(value))

    @classmethod
    def var(cls, name):
        return cls(Var(name))

    @property
    def is_constant(self):
        return not self.free_vars

    def evaluate(self, bindings: Mapping[str, float]) -> float:
        return float(self._fn(bindings))

    def __call__(self, **bindings):
        return self.evaluate(bindings)

    def diff(self, var: str) -> "Expr":
        return Expr(_diff(self.node, var))

    def substitute(self, mapping: Mapping[str, object]) -> "Expr":
        """Replace variables by expressions, numbers or other variable names."""
        nodes = {k: _as_node(v) for k, v in mapping.items()}
        return Expr(_substitute(self.node, nodes))

    def __str__(self):
        return _to_str(self.node)

    def __repr__(self):
        return f"Expr({str(self)!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and self.node == other.node

    def __hash__(self):
        return hash(self.node)

    def __add__(self, other):
        return Expr(_make_add(self.node, _as_node(other)))

    def __radd__(self, other):
        return Expr(_make_add(_as_node(other), self.node))

    def __sub__(self, other):
        return Expr(_make_sub(self.node, _as_node(other)))

    def __rsub__(self, other):
        return Expr(_make_sub(_as_node(other), self.node))

    def __mul__(self, other):
        return Expr(_make_mul(self.node, _as_node(other)))

    def __rmul__(self, other):
        return Expr(_make_mul(_as_node(other), self.node))

    def __truediv__(self, other):
        return Expr(_make_div(self.node, _as_node(other)))

    def __rtruediv__(self, other):
        return Expr(_make_div(_as_node(other), self.node))

    def __pow__(self, other):
        return Expr(_make_pow(self.node, _as_node(other)))

    def __neg__(self):
        return Expr(_make_neg(self.node))


def _as_node(value):
    if isinstance(value, Expr):
        return value.node
    if isinstance(value, str):
        return parse(value).node
    if isinstance(value, (int, float, np.floating, np.integer)):
        return _num(value)
    raise TypeError(f"cannot convert {type(value).__name__} to an expression")


def parse(source: str) -> Expr:
    """Parse infix source text into an :class:`Expr`."""
    if not isinstance(source, str):
        raise InputError(f"expression source must be a string, got {type(source).__name__}")
    if source.strip() == "":
        raise EmptyExpressionError()
    return Expr(_Parser(source).parse())


def as_expr(value) -> Expr:
    """Coerce a string, number or Expr to an Expr."""
    if isinstance(value, Expr):
        return value
    return Expr(_as_node(value))


_EYES = {}


def seed_env(bindings: Mapping[str, float], seed_vars: Sequence[str]):
    """Build an evaluation environment where ``seed_vars`` are unit jets."""
    env = dict(bindings)
    k = len(seed_vars)
    eye = _EYES.get(k)
    if eye is None:
        eye = _EYES.setdefault(k, np.eye(k))
    for i, name in enumerate(seed_vars):
        if name not in env:
            raise UnboundVariableError(name)
        env[name] = Jet(float(env[name]), eye[i])
    return env


def jet_from_env(e: Expr, env, k: int):
    """Evaluate ``e`` in a prepared jet environment; returns (value, grad, hess)."""
    r = e._fn(env)
    if isinstance(r, Jet):
        return r.v, r.g, r._hess()
    return float(r), np.zeros(k), np.zeros((k, k))


def eval_jet(e: Expr, ctx: EvalContext) -> SecondOrderJet:
    seeds = tuple(ctx.seed_vars)
    env = seed_env(ctx.bindings, seeds)
    v, g, H = jet_from_env(e, env, len(seeds))
    return SecondOrderJet(float(v), np.array(g, dtype=float), np.array(H, dtype=float), seeds)


def fd_derivative(e: Expr, ctx: EvalContext, var: str, order: int = 1,
                  h: float = 1e-5, var2: str | None = None) -> float:
    """Central finite-difference derivative, used as an independent check on jets.

    ``order=1`` gives d/dvar, ``order=2`` gives d2/dvar2, or the mixed
    derivative d2/(dvar dvar2) when ``var2`` is given.
    """
    base = dict(ctx.bindings)

    def f(**shifts):
        b = dict(base)
        for name, dv in shifts.items():
            b[name] = b[name] + dv
        return e.evaluate(b)

    if var not in base or (var2 is not None and var2 not in base):
        raise UnboundVariableError(var if var not in base else var2)
    if order == 1:
        return (f(**{var: h}) - f(**{var: -h})) / (2.0 * h)
    if order != 2:
        raise InputError("fd_derivative supports order 1 or 2")
    if var2 is None or var2 == var:
        return (f(**{var: h}) - 2.0 * f() + f(**{var: -h})) / (h * h)

    def f2(a, b):
        return f(**{var: a, var2: b})
    return (f2(h, h) - f2(h, -h) - f2(-h, h) + f2(-h, -h)) / (4.0 * h * h)


# ------------------------------------------------------------ array helpers

@dataclass
class ExprArray:
    """A fixed-shape array of expressions evaluated together.

    Constant arrays are evaluated once and cached, which keeps structure
    functions such as Lie-algebra constants free during integration.
    """

    shape: tuple
    entries: tuple
    _const: np.ndarray | None = field(default=None, repr=False)
    _live: tuple = field(default=(), repr=False)

    @classmethod
    def build(cls, nested, shape):
        flat = np.empty(int(np.prod(shape)) if shape else 1, dtype=object)
        arr = np.array(nested, dtype=object) if not isinstance(nested, np.ndarray) else nested
        if arr.shape != tuple(shape):
            raise DimensionError(f"expected shape {tuple(shape)}, got {arr.shape}")
        for i, v in enumerate(arr.reshape(-1)):
            flat[i] = as_expr(v)
        out = cls(tuple(shape), tuple(flat))
        live = tuple(i for i, e in enumerate(out.entries) if not e.is_constant)
        out._live = live
        base = np.array([e.evaluate({}) if e.is_constant else 0.0 for e in out.entries])
        out._const = base
        return out

    def free_vars(self):
        names = []
        for e in self.entries:
            for v in e.free_vars:
                if v not in names:
                    names.append(v)
        return names

    @property
    def is_constant(self):
        return not self._live

    def value(self, env) -> np.ndarray:
        if not self._live:
            return self._const.reshape(self.shape).copy()
        out = self._const.copy()
        for i in self._live:
            out[i] = self.entries[i].evaluate(env)
        return out.reshape(self.shape)

    def gradient(self, env, seeds):
        """Values and first derivatives with respect to ``seeds``.

        Returns ``(value, d)`` where ``d`` has shape ``shape + (len(seeds),)``.
        """
        k = len(seeds)
        d = np.zeros((len(self.entries), k))
        if not self._live:
            return self._const.reshape(self.shape).copy(), d.reshape(self.shape + (k,))
        jenv = seed_env(env, seeds)
        out = self._const.copy()
        for i in self._live:
            r = self.entries[i]._fn(jenv)
            if isinstance(r, Jet):
                out[i], d[i] = r.v, r.g
            else:
                out[i] = r
        return out.reshape(self.shape), d.reshape(self.shape + (k,))

    def nested_strings(self):
        return np.array([str(e) for e in self.entries], dtype=object).reshape(self.shape).tolist()
