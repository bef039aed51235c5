"""Differential forms in coordinate normal form, vector fields, and the
operations built on forward-mode derivatives: pullback, exterior derivative,
Lie bracket and the Poincaré homotopy operator.

A k-form on ℝᴺ is stored as coefficients ω_I over strictly increasing
multi-indices I, and evaluated as

    ω(x)(v₁, …, v_k) = Σ_I ω_I(x) · det[v_a[I_b]].

Coefficients are ring-generic scalar functions, so every derived form (a
pullback, a derivative, a primitive) can itself be differentiated again.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Mapping, Sequence
from fractions import Fraction

import numpy as np

from .expr import DomainError, Dual, Expr, SmoothMap, directional, parse_expression, pretty
from .geometry import gauss_legendre
from .report import Report
from . import sampling

Scalar = Callable[[list], object]


def _as_scalar(c, dim: int) -> tuple[Scalar, Expr | None]:
    if isinstance(c, str):
        c = parse_expression(c, dim)
    if isinstance(c, Expr):
        expr = c
        return (lambda xs: expr.evaluate(xs)), expr
    if isinstance(c, SmoothMap):
        if c.coarity != 1:
            raise ValueError("coefficient maps must be scalar")
        return (lambda xs: c.apply(xs)[0]), (c.exprs[0] if c.exprs else None)
    if isinstance(c, (int, float, Fraction)):
        v = float(c)
        return (lambda xs: v), None
    if callable(c):
        return c, None
    raise TypeError(f"cannot use {c!r} as a form coefficient")


def parse_multi_index(index) -> tuple[int, ...]:
    """``"01"``, ``"0,1"`` or ``(0, 1)`` → ``(0, 1)``."""
    if isinstance(index, str):
        parts = index.split(",") if "," in index else list(index)
        return tuple(int(p) for p in parts if p.strip() != "")
    return tuple(int(i) for i in index)


def _det(rows: Sequence[Sequence]):
    k = len(rows)
    if k == 0:
        return 1.0
    if k == 1:
        return rows[0][0]
    if k == 2:
        return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
    total = 0.0
    for perm in itertools.permutations(range(k)):
        sign = _perm_sign(perm)
        term = rows[0][perm[0]]
        for a in range(1, k):
            term = term * rows[a][perm[a]]
        total = total + term if sign > 0 else total - term
    return total


def _perm_sign(perm) -> int:
    sign = 1
    perm = list(perm)
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def _basis(dim: int, j: int) -> list[float]:
    return [1.0 if i == j else 0.0 for i in range(dim)]


def _partial(c: Scalar, xs: list, j: int):
    return directional(lambda ys: [c(ys)], xs, _basis(len(xs), j))[0]


class DifferentialForm:
    """A k-form on ℝᴺ with coefficients over increasing multi-indices."""

    def __init__(self, dim: int, degree: int, coefficients: Mapping = None):
        if not 0 <= degree <= dim:
            raise ValueError("degree must lie between 0 and the ambient dimension")
        self.dim = dim
        self.degree = degree
        self.coefficients: dict[tuple[int, ...], Scalar] = {}
        self.exprs: dict[tuple[int, ...], Expr | None] = {}
        for index, c in (coefficients or {}).items():
            I = parse_multi_index(index)
            if len(I) != degree or any(a >= b for a, b in zip(I, I[1:])) or any(
                not 0 <= i < dim for i in I
            ):
                raise ValueError(f"multi-index {I} is not strictly increasing of length {degree} in range")
            if I in self.coefficients:
                raise ValueError(f"duplicate multi-index {I}")
            self.coefficients[I], self.exprs[I] = _as_scalar(c, dim)

    @classmethod
    def from_terms(cls, dim: int, degree: int, terms: Sequence[tuple]) -> "DifferentialForm":
        """Build from ``(multi-index, coefficient-expression)`` pairs."""
        return cls(dim, degree, {parse_multi_index(i): c for i, c in terms})

    @classmethod
    def zero(cls, dim: int, degree: int) -> "DifferentialForm":
        return cls(dim, degree, {})

    def apply(self, xs: list, vectors: Sequence[Sequence]):
        """Ring-generic evaluation; ``vectors`` holds k lists of N components."""
        if len(vectors) != self.degree:
            raise ValueError(f"a {self.degree}-form takes {self.degree} vectors, got {len(vectors)}")
        total = 0.0
        for I, c in self.coefficients.items():
            minor = [[v[i] for i in I] for v in vectors]
            total = total + c(xs) * _det(minor)
        return total

    def __call__(self, x, *vectors) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"point dimension {pts.shape[1]} != {self.dim}")
        vs = []
        for v in vectors:
            v = np.broadcast_to(np.asarray(v, dtype=float), pts.shape)
            vs.append([v[:, i] for i in range(self.dim)])
        out = self.apply([pts[:, i] for i in range(self.dim)], vs)
        out = np.broadcast_to(np.asarray(out, dtype=float), (len(pts),)).copy()
        return out[0] if single else out

    def _combine(self, other: "DifferentialForm", sign: float) -> "DifferentialForm":
        if (self.dim, self.degree) != (other.dim, other.degree):
            raise ValueError("forms of different type")
        coeffs = dict(self.coefficients)
        for I, c in other.coefficients.items():
            if I in coeffs:
                a = coeffs[I]
                coeffs[I] = (lambda a, c: lambda xs: a(xs) + sign * c(xs))(a, c)
            else:
                coeffs[I] = (lambda c: lambda xs: sign * c(xs))(c)
        return DifferentialForm(self.dim, self.degree, coeffs)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return self.scaled(-1.0)

    def __rmul__(self, a):
        return self.scaled(a)

    def scaled(self, a) -> "DifferentialForm":
        """Multiply by a constant, or by a scalar function/expression."""
        if isinstance(a, (int, float, Fraction, np.floating)):
            v = float(a)
            return DifferentialForm(
                self.dim, self.degree,
                {I: (lambda c: lambda xs: v * c(xs))(c) for I, c in self.coefficients.items()},
            )
        f, _ = _as_scalar(a, self.dim)
        return DifferentialForm(
            self.dim, self.degree,
            {I: (lambda c: lambda xs: f(xs) * c(xs))(c) for I, c in self.coefficients.items()},
        )

    def __repr__(self) -> str:
        terms = []
        for I in self.coefficients:
            e = self.exprs.get(I)
            terms.append(f"{''.join(map(str, I)) or '1'}: {pretty(e) if e is not None else '<code>'}")
        return f"DifferentialForm(dim={self.dim}, degree={self.degree}, {{{', '.join(terms)}}})"


def eval_form(omega: DifferentialForm, x, *vectors) -> np.ndarray:
    return omega(x, *vectors)


def exterior_derivative(omega: DifferentialForm) -> DifferentialForm:
    """(dω)_J = Σ_p (-1)^p ∂_{J_p} ω_{J∖J_p}, derivatives by forward mode."""
    N, k = omega.dim, omega.degree
    if k == N:
        raise ValueError("a top-degree form has no exterior derivative of degree <= N")
    coeffs = {}
    for J in itertools.combinations(range(N), k + 1):
        terms = []
        for p, j in enumerate(J):
            I = J[:p] + J[p + 1 :]
            if I in omega.coefficients:
                terms.append((-1.0 if p % 2 else 1.0, j, omega.coefficients[I]))
        if terms:
            def c(xs, terms=terms):
                total = 0.0
                for sign, j, cI in terms:
                    d = _partial(cI, xs, j)
                    total = total + d if sign > 0 else total - d
                return total
            coeffs[J] = c
    return DifferentialForm(N, k + 1, coeffs)


def pullback(omega: DifferentialForm, phi: SmoothMap) -> DifferentialForm:
    """Φ*ω on ℝᵐ: (Φ*ω)(q)(u…) = ω(Φ(q))(DΦ(q)u, …)."""
    if phi.coarity != omega.dim:
        raise ValueError(f"map lands in ℝ^{phi.coarity}, form lives on ℝ^{omega.dim}")
    m, k = phi.arity, omega.degree
    if k > m:
        raise ValueError("cannot pull a k-form back to a space of dimension < k")
    coeffs = {}
    for K in itertools.combinations(range(m), k):
        def c(qs, K=K):
            cols = [directional(phi.apply, qs, _basis(m, j)) for j in K]
            return omega.apply(phi.apply(qs), cols)
        coeffs[K] = c
    return DifferentialForm(m, k, coeffs)


def vector_field_formula(omega: DifferentialForm, fields: Sequence["VectorField"], x) -> np.ndarray:
    """dω(A₀, …, A_k) by the invariant formula with directional derivatives
    and brackets, for comparison against :func:`exterior_derivative`.

    Uses the bracket with the convention [X, Y]f = X(Yf) - Y(Xf), which is
    ``lie_bracket(Y, X)`` here.
    """
    k = omega.degree
    if len(fields) != k + 1:
        raise ValueError("need k+1 vector fields")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    xs = [pts[:, i] for i in range(omega.dim)]
    total = 0.0
    for i, Ai in enumerate(fields):
        rest = [f for j, f in enumerate(fields) if j != i]
        term = directional(
            lambda ys: [omega.apply(ys, [f.apply(ys) for f in rest])], xs, Ai.apply(xs)
        )[0]
        total = total + (-1) ** i * term
    for i, j in itertools.combinations(range(k + 1), 2):
        br = lie_bracket(fields[j], fields[i]).apply(xs)
        rest = [f.apply(xs) for m, f in enumerate(fields) if m not in (i, j)]
        total = total + (-1) ** (i + j) * omega.apply(xs, [br] + rest)
    return np.broadcast_to(np.asarray(total, dtype=float), (len(pts),)).copy()


# ---------------------------------------------------------------------------
# vector fields


class VectorField(SmoothMap):
    """A smooth section of Tℝᴺ = ℝᴺ × ℝᴺ, given by its principal part."""

    def __init__(self, components, arity, coarity=None, exprs=None):
        coarity = arity if coarity is None else coarity
        if coarity != arity:
            raise ValueError("a vector field on ℝᴺ has N components")
        super().__init__(components, arity, coarity, exprs)


def lie_bracket(A: VectorField, B: VectorField) -> VectorField:
    """[A, B](x) = DA(x)·B(x) - DB(x)·A(x), in flat coordinates.

    This is the negative of the usual commutator of derivations.
    """
    if A.arity != B.arity:
        raise ValueError("fields on different spaces")

    def components(xs):
        a, b = A.apply(xs), B.apply(xs)
        dab = directional(A.apply, xs, b)
        dba = directional(B.apply, xs, a)
        return [p - q for p, q in zip(dab, dba)]

    return VectorField(components, A.arity)


def bracket_naturality_check(
    phi: SmoothMap, A: VectorField, B: VectorField, points, tol: float = 1e-9
) -> Report:
    """Dφ(x)[A,B](x) = [A,B](φ(x)) for φ-related fields A, B."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    J = phi.jacobian(pts)
    img = phi(pts)
    related = {}
    for label, F in (("A", A), ("B", B)):
        related[label] = float(np.max(np.abs(np.einsum("pij,pj->pi", J, F(pts)) - F(img))))
    if max(related.values()) > tol:
        bad = max(related, key=related.get)
        return Report(
            "bracket_naturality",
            False,
            {"precondition": "fields are not φ-related", "relatedness_defect": related},
            tolerance=tol,
            witnesses=[{"field": bad, "defect": related[bad]}],
        )
    C = lie_bracket(A, B)
    defect = np.max(np.abs(np.einsum("pij,pj->pi", J, C(pts)) - C(img)), axis=1)
    k = int(np.argmax(defect))
    ok = bool(defect[k] <= tol)
    return Report(
        "bracket_naturality",
        ok,
        {"max_defect": float(defect[k]), "relatedness_defect": related},
        tolerance=tol,
        witnesses=[] if ok else [{"x": pts[k], "defect": float(defect[k])}],
    )


# ---------------------------------------------------------------------------
# Poincaré homotopy operator


def _expand(v):
    if isinstance(v, Dual):
        return Dual(_expand(v.re), _expand(v.eps), v.tag)
    if isinstance(v, np.ndarray):
        return v[..., None]
    return v


def _weighted_sum(v, w: np.ndarray):
    if isinstance(v, Dual):
        return Dual(_weighted_sum(v.re, w), _weighted_sum(v.eps, w), v.tag)
    return np.sum(v * w, axis=-1)


def _primal(v):
    while isinstance(v, Dual):
        v = v.re
    return v


def poincare_primitive(
    omega: DifferentialForm, domain=None, tol: float = 1e-12, max_order: int = 256
) -> DifferentialForm:
    """τ(y)(v₁…v_{k-1}) = ∫₀¹ t^{k-1} ω(ty)(y, v₁, …, v_{k-1}) dt.

    The t-integral uses Gauss–Legendre whose order is doubled until two
    successive orders agree to ``tol`` on the primal values; the chosen rule
    is then applied to the full (possibly dual) integrand so that d(τ)
    differentiates under the integral sign.  ``domain`` must be convex and
    contain 0.
    """
    k, N = omega.degree, omega.dim
    if k < 1:
        raise ValueError("the homotopy operator needs a form of degree >= 1")
    if domain is not None and not domain.contains(np.zeros(N))[0]:
        raise ValueError("the domain must contain the origin")

    def integral(ys, I, order):
        t, w = gauss_legendre(order)
        Y = [_expand(y) for y in ys]
        tys = [y * t for y in Y]
        vecs = [Y] + [_basis(N, i) for i in I]
        vals = omega.apply(tys, vecs)
        return _weighted_sum(vals * t ** (k - 1), w)

    def coefficient(I):
        def c(ys):
            if domain is not None:
                p = np.atleast_2d(np.stack(np.broadcast_arrays(*[_primal(y) for y in ys]), axis=-1))
                if not np.all(domain.contains(p.reshape(-1, N))):
                    raise DomainError("point outside the star-shaped domain")
            plain = [_primal(y) for y in ys]
            order = 8
            prev = integral(plain, I, order)
            while True:
                nxt = integral(plain, I, 2 * order)
                order *= 2
                if np.max(np.abs(nxt - prev), initial=0.0) <= tol or order >= max_order:
                    break
                prev = nxt
            if all(not isinstance(y, Dual) for y in ys):
                return nxt
            return integral(ys, I, order)
        return c

    return DifferentialForm(
        N, k - 1, {I: coefficient(I) for I in itertools.combinations(range(N), k - 1)}
    )


# ---------------------------------------------------------------------------
# compatibility with group actions


def invariance_defect(omega: DifferentialForm, phi: SmoothMap, points, vectors) -> np.ndarray:
    """|ω(φx)(Dφ v…) - ω(x)(v…)| at each sample."""
    pts = np.atleast_2d(points)
    J = phi.jacobian(pts)
    pushed = [np.einsum("pij,pj->pi", J, v) for v in vectors]
    return np.abs(omega(phi(pts), *pushed) - omega(pts, *vectors))


def check_form_invariance(
    omega: DifferentialForm, chart, samples: int = 64, tol: float = 1e-10
) -> Report:
    pts = chart.domain.sample(samples, offset=11)
    gen = sampling.rng(13)
    vectors = [gen.standard_normal(pts.shape) for _ in range(omega.degree)]
    worst = 0.0
    witnesses = []
    for g, phi in enumerate(chart.elements):
        d = invariance_defect(omega, phi, pts, vectors)
        k = int(np.argmax(d))
        worst = max(worst, float(d[k]))
        if d[k] > tol:
            witnesses.append({
                "element": chart.names[g], "x": pts[k],
                "vectors": [v[k] for v in vectors], "defect": float(d[k]),
            })
    return Report("check_form_invariance", not witnesses, {"max_defect": worst},
                  tolerance=tol, witnesses=witnesses)
