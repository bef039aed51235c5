"""Expression language for maps, group elements, vector fields and form coefficients.

Expressions are parsed into small immutable trees and evaluated over any
"number ring": plain floats, numpy arrays (one entry per sample point), or
forward-mode :class:`Dual` numbers wrapping either.  Duals are tagged so that
nested differentiation (second derivatives, brackets of brackets) never mixes
perturbations of different levels.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | factor
    factor := atom ('^' int)?
    atom   := number | 'x' int | fn '(' expr ')' | '(' expr ')'
    fn     := sin | cos | exp | sqrt
    number := int '/' int | decimal

A literal ``p/q`` written without whitespace is a single rational token, so
``2/3^2`` is ``(2/3)^2``.  Literals stay exact :class:`~fractions.Fraction`
values in the tree and become floats only when evaluated.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "ExprSyntaxError",
    "Expr",
    "Var",
    "Const",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "Dual",
    "SmoothMap",
    "parse_expression",
    "eval_map",
    "jacobian",
    "second_directional",
    "directional",
    "pretty",
]


class DomainError(ValueError):
    """Evaluation left the declared domain of an expression or map."""


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# forward-mode dual numbers

_tags = itertools.count(1)


class Dual:
    """First-order dual number ``re + eps * ε`` with a perturbation tag.

    ``re`` and ``eps`` may be floats, arrays, or duals of a lower tag; a dual
    with a higher tag is always the outer layer.
    """

    __slots__ = ("re", "eps", "tag")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, re, eps, tag: int):
        self.re = re
        self.eps = eps
        self.tag = tag

    def _split(self, other):
        if isinstance(other, Dual) and other.tag == self.tag:
            return other.re, other.eps
        return other, 0.0

    def _outer(self, other) -> bool:
        return isinstance(other, Dual) and other.tag > self.tag

    def __add__(self, other):
        if self._outer(other):
            return other.__radd__(self)
        b, db = self._split(other)
        return Dual(self.re + b, self.eps + db, self.tag)

    def __radd__(self, other):
        b, db = self._split(other)
        return Dual(b + self.re, db + self.eps, self.tag)

    def __sub__(self, other):
        if self._outer(other):
            return other.__rsub__(self)
        b, db = self._split(other)
        return Dual(self.re - b, self.eps - db, self.tag)

    def __rsub__(self, other):
        b, db = self._split(other)
        return Dual(b - self.re, db - self.eps, self.tag)

    def __mul__(self, other):
        if self._outer(other):
            return other.__rmul__(self)
        b, db = self._split(other)
        return Dual(self.re * b, self.re * db + self.eps * b, self.tag)

    def __rmul__(self, other):
        b, db = self._split(other)
        return Dual(b * self.re, b * self.eps + db * self.re, self.tag)

    def __truediv__(self, other):
        if self._outer(other):
            return other.__rtruediv__(self)
        b, db = self._split(other)
        q = self.re / b
        return Dual(q, (self.eps - q * db) / b, self.tag)

    def __rtruediv__(self, other):
        b, db = self._split(other)
        q = b / self.re
        return Dual(q, (db - q * self.eps) / self.re, self.tag)

    def __neg__(self):
        return Dual(-self.re, -self.eps, self.tag)

    def __pos__(self):
        return self

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise TypeError("Dual supports non-negative integer powers only")
        if n == 0:
            return 1.0
        if n == 1:
            return self
        return Dual(self.re**n, n * self.re ** (n - 1) * self.eps, self.tag)

    def __repr__(self) -> str:
        return f"Dual({self.re!r}, {self.eps!r}, tag={self.tag})"


def _primal(v):
    while isinstance(v, Dual):
        v = v.re
    return v


def _finite(v) -> bool:
    if isinstance(v, Dual):
        return _finite(v.re) and _finite(v.eps)
    return bool(np.all(np.isfinite(v)))


def _sin(v):
    if isinstance(v, Dual):
        return Dual(_sin(v.re), _cos(v.re) * v.eps, v.tag)
    return np.sin(v)


def _cos(v):
    if isinstance(v, Dual):
        return Dual(_cos(v.re), -_sin(v.re) * v.eps, v.tag)
    return np.cos(v)


def _exp(v):
    if isinstance(v, Dual):
        e = _exp(v.re)
        return Dual(e, e * v.eps, v.tag)
    with np.errstate(over="ignore"):
        return np.exp(v)


def _sqrt(v):
    if isinstance(v, Dual):
        s = _sqrt(v.re)
        return Dual(s, v.eps / (2.0 * s), v.tag)
    return np.sqrt(v)


_FUNCTIONS: dict[str, Callable] = {"sin": _sin, "cos": _cos, "exp": _exp, "sqrt": _sqrt}


def tangent_part(v, tag: int):
    """The ε-coefficient of ``v`` for perturbation ``tag`` (0 if independent)."""
    if isinstance(v, Dual) and v.tag == tag:
        return v.eps
    return 0.0


def directional(fn: Callable[[list], list], xs: Sequence, vs: Sequence) -> list:
    """Directional derivative ``Dfn(xs)·vs`` of a ring-generic vector function."""
    tag = next(_tags)
    out = fn([Dual(x, v, tag) for x, v in zip(xs, vs)])
    return [tangent_part(o, tag) for o in out]


# ---------------------------------------------------------------------------
# syntax tree


class Expr:
    """Base class of expression nodes.  Nodes are immutable and hashable."""

    precedence = 5

    def evaluate(self, xs: Sequence):
        raise NotImplementedError

    def variables(self) -> set[int]:
        raise NotImplementedError

    def __str__(self) -> str:
        return pretty(self)


@dataclass(frozen=True)
class Var(Expr):
    index: int

    def evaluate(self, xs):
        return xs[self.index]

    def variables(self):
        return {self.index}


@dataclass(frozen=True)
class Const(Expr):
    value: Fraction

    def evaluate(self, xs):
        return float(self.value)

    def variables(self):
        return set()


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    precedence = 3

    def evaluate(self, xs):
        return -self.arg.evaluate(xs)

    def variables(self):
        return self.arg.variables()


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def precedence(self):
        return 1 if self.op in "+-" else 2

    @property
    def domain(self) -> str | None:
        # declared domain flag: denominators must not vanish
        return "nonzero-denominator" if self.op == "/" else None

    def evaluate(self, xs):
        a = self.left.evaluate(xs)
        b = self.right.evaluate(xs)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if np.any(_primal(b) == 0):
            raise DomainError(f"division by zero in {pretty(self)}")
        return a / b

    def variables(self):
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int
    precedence = 4

    def evaluate(self, xs):
        b = self.base.evaluate(xs)
        if self.exponent == 0:
            return 1.0
        return b**self.exponent

    def variables(self):
        return self.base.variables()


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr

    @property
    def domain(self) -> str | None:
        return "nonnegative" if self.fn == "sqrt" else None

    def evaluate(self, xs):
        a = self.arg.evaluate(xs)
        if self.fn == "sqrt":
            p = _primal(a)
            if np.any(p < 0):
                raise DomainError(f"sqrt of a negative value in {pretty(self)}")
            if isinstance(a, Dual) and np.any(p == 0):
                raise DomainError(f"sqrt is not differentiable at 0 in {pretty(self)}")
        out = _FUNCTIONS[self.fn](a)
        if self.fn == "exp" and not _finite(out):
            raise DomainError(f"overflow in {pretty(self)}")
        return out

    def variables(self):
        return self.arg.variables()


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<rational>\d+/\d+(?![\d.]))
  | (?P<decimal>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)
_VAR = re.compile(r"x(\d+)\Z")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, arity: int):
        self.text = text
        self.arity = arity
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExprSyntaxError(message, _byte_offset(self.text, tok[2]))

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] not in ("op",):
            raise self.error(f"expected {value!r}", tok)
        return tok

    def parse(self) -> Expr:
        node = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.factor()

    def factor(self):
        node = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.take()
            if tok[0] != "decimal" or not tok[1].isdigit():
                raise self.error("exponent must be a non-negative integer", tok)
            node = Pow(node, int(tok[1]))
        return node

    def atom(self):
        tok = self.take()
        kind, text, _ = tok
        if kind == "rational":
            p, q = text.split("/")
            if int(q) == 0:
                raise self.error("zero denominator in rational literal", tok)
            return Const(Fraction(int(p), int(q)))
        if kind == "decimal":
            return Const(Fraction(text))
        if kind == "name":
            m = _VAR.match(text)
            if m:
                index = int(m.group(1))
                if index >= self.arity:
                    raise self.error(
                        f"variable index out of range: x{index} with arity {self.arity}", tok
                    )
                return Var(index)
            if text in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            raise self.error(f"unknown identifier {text!r}", tok)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise self.error(f"unexpected token {text!r}" if text else "unexpected end of input", tok)


def parse_expression(text: str, arity: int) -> Expr:
    """Parse ``text`` into an expression tree in variables ``x0..x{arity-1}``."""
    return _Parser(text, arity).parse()


def pretty(node: Expr) -> str:
    """Render a tree as text that parses back to an equal tree."""
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Const):
        v = node.value
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(node, Neg):
        inner = pretty(node.arg)
        return "-" + (f"({inner})" if node.arg.precedence < Neg.precedence else inner)
    if isinstance(node, Pow):
        inner = pretty(node.base)
        if not isinstance(node.base, (Var, Const, Call)):
            inner = f"({inner})"
        return f"{inner}^{node.exponent}"
    if isinstance(node, Call):
        return f"{node.fn}({pretty(node.arg)})"
    left = pretty(node.left)
    right = pretty(node.right)
    if node.left.precedence < node.precedence:
        left = f"({left})"
    # same-precedence right operands keep their grouping so trees round-trip
    if node.right.precedence <= node.precedence:
        right = f"({right})"
    # spaces keep "a / b" from fusing into a rational literal
    return f"{left} {node.op} {right}"


# ---------------------------------------------------------------------------
# smooth maps


def _evaluate_checked(node: Expr, xs):
    out = node.evaluate(xs)
    if not _finite(out):
        raise DomainError(f"non-finite value from {pretty(node)}")
    return out


class SmoothMap:
    """A smooth map ℝᵐ → ℝᵖ.

    ``components`` takes a list of ``arity`` ring elements and returns a list of
    ``coarity`` ring elements.  Maps built with :meth:`from_strings` keep their
    parsed expressions in ``exprs``; maps assembled in code (pullbacks,
    brackets, compositions) carry ``exprs=None``.
    """

    def __init__(
        self,
        components: Callable[[list], list],
        arity: int,
        coarity: int,
        exprs: tuple[Expr, ...] | None = None,
    ):
        self._components = components
        self.arity = arity
        self.coarity = coarity
        self.exprs = exprs

    @classmethod
    def from_strings(cls, texts: Sequence[str], arity: int) -> "SmoothMap":
        exprs = tuple(parse_expression(t, arity) for t in texts)
        return cls.from_exprs(exprs, arity)

    @classmethod
    def from_exprs(cls, exprs: Sequence[Expr], arity: int) -> "SmoothMap":
        exprs = tuple(exprs)

        def components(xs):
            return [_evaluate_checked(e, xs) for e in exprs]

        return cls(components, arity, len(exprs), exprs)

    @classmethod
    def identity(cls, dim: int) -> "SmoothMap":
        return cls.from_exprs([Var(i) for i in range(dim)], dim)

    @classmethod
    def linear(cls, matrix, offset=None) -> "SmoothMap":
        """x ↦ M x + c with the entries frozen as exact decimal literals."""
        m = np.asarray(matrix, dtype=float)
        c = np.zeros(m.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        exprs = []
        for i in range(m.shape[0]):
            node: Expr | None = None
            terms = [(Fraction(float(m[i, j])), Var(j)) for j in range(m.shape[1]) if m[i, j] != 0]
            if c[i] != 0:
                terms.append((Fraction(float(c[i])), None))
            for coef, var in terms:
                mag = Const(abs(coef))
                t = mag if var is None else (var if abs(coef) == 1 else BinOp("*", mag, var))
                if node is None:
                    node = Neg(t) if coef < 0 else t
                else:
                    node = BinOp("-" if coef < 0 else "+", node, t)
            exprs.append(node if node is not None else Const(Fraction(0)))
        return cls.from_exprs(exprs, m.shape[1])

    def apply(self, xs: Sequence) -> list:
        if len(xs) != self.arity:
            raise ValueError(f"expected {self.arity} inputs, got {len(xs)}")
        return list(self._components(list(xs)))

    def __call__(self, x) -> np.ndarray:
        """Evaluate at one point ``(m,)`` or a batch ``(P, m)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        out = self.apply([pts[:, i] for i in range(self.arity)])
        res = np.stack([np.broadcast_to(np.asarray(o, dtype=float), (len(pts),)) for o in out], axis=-1) \
            if out else np.zeros((len(pts), 0))
        return res[0] if single else res

    def jacobian(self, x) -> np.ndarray:
        """Exact forward-mode Jacobian, shape ``(p, m)`` or ``(P, p, m)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        P = len(pts)
        xs = [pts[:, i] for i in range(self.arity)]
        J = np.zeros((P, self.coarity, self.arity))
        for j in range(self.arity):
            e = [1.0 if i == j else 0.0 for i in range(self.arity)]
            col = directional(self.apply, xs, e)
            for i, c in enumerate(col):
                c = _primal(c)
                J[:, i, j] = np.broadcast_to(np.asarray(c, dtype=float), (P,))
        if not np.all(np.isfinite(J)):
            raise DomainError("non-finite derivative")
        return J[0] if single else J

    def second_directional(self, x, u, v) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        P = len(pts)
        xs = [pts[:, i] for i in range(self.arity)]
        u = np.broadcast_to(np.asarray(u, dtype=float), pts.shape)
        v = np.broadcast_to(np.asarray(v, dtype=float), pts.shape)
        us = [u[:, i] for i in range(self.arity)]
        vs = [v[:, i] for i in range(self.arity)]

        def first(ys):
            return directional(self.apply, ys, us)

        out = directional(first, xs, vs)
        res = np.stack([np.broadcast_to(np.asarray(_primal(o), dtype=float), (P,)) for o in out], axis=-1)
        return res[0] if single else res

    def compose(self, inner: "SmoothMap") -> "SmoothMap":
        """``self ∘ inner``."""
        if inner.coarity != self.arity:
            raise ValueError("dimension mismatch in composition")
        return SmoothMap(lambda xs: self.apply(inner.apply(xs)), inner.arity, self.coarity)

    def __repr__(self) -> str:
        if self.exprs is not None:
            return f"SmoothMap({[pretty(e) for e in self.exprs]!r}, arity={self.arity})"
        return f"SmoothMap(<code>, arity={self.arity}, coarity={self.coarity})"


def eval_map(f: SmoothMap, x) -> np.ndarray:
    return f(x)


def jacobian(f: SmoothMap, x) -> np.ndarray:
    return f.jacobian(x)


def second_directional(f: SmoothMap, x, u, v) -> np.ndarray:
    """D²f(x)(u, v) by nested forward-mode differentiation."""
    return f.second_directional(x, u, v)
