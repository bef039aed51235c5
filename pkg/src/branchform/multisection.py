"""Finite-dimensional model of perturbed sections and their invariants.

A section f: ℝᴺ → ℝʳ of the trivial bundle is perturbed by a multisection
(local sections s_j with rational weights σ_j summing to one).  The solution
set is the union of the zero sets Z_j = {f = s_j}, each carrying weight σ_j,
and the invariant Ψ integrates a form over it (minus a boundary term).

Supported: N = r (isolated solutions) for any N, and N = 2, r = 1 (solution
curves traced by marching squares).
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq

from .branched import BranchingStructure
from .expr import Dual, SmoothMap
from .forms import DifferentialForm
from .geometry import Box, Branch, Chart, Mesh, ParamDomain
from .measure import global_boundary_measure, global_measure
from .report import Report

MATCH_TOL = 1e-9
TRANSVERSALITY_FLOOR = 1e-8
POLISH_TOL = 1e-12


class NotInGoodPosition(ValueError):
    """A solution is degenerate (transversality below the floor)."""

    def __init__(self, message, witness):
        super().__init__(f"not in good position: {message} at {np.asarray(witness).tolist()}")
        self.witness = np.asarray(witness)


class PropernessError(ValueError):
    """The solution set reaches a face of the box that is not a boundary face."""

    def __init__(self, message, witness):
        super().__init__(f"properness violated: {message} at {np.asarray(witness).tolist()}")
        self.witness = np.asarray(witness)


@dataclass(frozen=True)
class ToySection:
    """Section ``f`` over ``box``; lower faces of axes in ``corners`` are boundary."""

    f: SmoothMap
    box: Box
    corners: tuple[int, ...] = ()

    def __post_init__(self):
        if self.f.arity != self.box.dim:
            raise ValueError("section and box differ in dimension")
        object.__setattr__(self, "corners", tuple(int(k) for k in self.corners))

    @property
    def base_dim(self) -> int:
        return self.f.arity

    @property
    def rank(self) -> int:
        return self.f.coarity


class Multisection:
    def __init__(self, sections: Sequence[SmoothMap], weights: Sequence):
        if len(sections) != len(weights) or not sections:
            raise ValueError("need one weight per section and at least one section")
        weights = tuple(Fraction(w) for w in weights)
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        if sum(weights) != 1:
            raise ValueError(f"weights must sum to exactly 1, got {sum(weights)}")
        shapes = {(s.arity, s.coarity) for s in sections}
        if len(shapes) != 1:
            raise ValueError("all local sections must have the same shape")
        self.sections = tuple(sections)
        self.weights = weights

    @classmethod
    def trivial(cls, base_dim: int, rank: int) -> "Multisection":
        return cls([SmoothMap.from_strings(["0"] * rank, base_dim)], [1])

    def __len__(self) -> int:
        return len(self.sections)


def lambda_value(m: Multisection, x, e) -> Fraction:
    """Λ(e) over x: total weight of the sections through e (0 if none)."""
    x = np.asarray(x, dtype=float)
    e = np.atleast_1d(np.asarray(e, dtype=float))
    total = Fraction(0)
    for s, w in zip(m.sections, m.weights):
        if np.max(np.abs(s(x) - e)) <= MATCH_TOL:
            total += w
    return total


def lambda_f(f: ToySection, m: Multisection, x) -> Fraction:
    return lambda_value(m, x, f.f(np.asarray(x, dtype=float)))


def _difference(f: SmoothMap, s: SmoothMap) -> SmoothMap:
    def components(xs):
        return [a - b for a, b in zip(f.apply(xs), s.apply(xs))]

    return SmoothMap(components, f.arity, f.coarity)


# ---------------------------------------------------------------------------
# solution sets


@dataclass
class SectionZeros:
    index: int
    weight: Fraction
    points: np.ndarray
    signs: tuple[int, ...] = ()
    branches: tuple[Branch, ...] = ()
    seams: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


@dataclass
class SolutionSet:
    section: ToySection
    multisection: Multisection
    dim: int
    zeros: list[SectionZeros] = field(default_factory=list)

    @property
    def branches(self) -> list[Branch]:
        return [b for z in self.zeros for b in z.branches]

    def structure(self, chart: Chart | None = None) -> BranchingStructure | None:
        """The weighted branched structure on the solution curves (dimension 1)."""
        if self.dim == 0:
            raise ValueError("isolated solutions are summed directly, not integrated")
        branches, weights = [], []
        for z in self.zeros:
            for b in z.branches:
                branches.append(b)
                weights.append(z.weight)
        if not branches:
            return None
        return BranchingStructure(chart or Chart(self.section.box), branches, weights)

    def theta_check(self) -> Report:
        """Θ of the solution structure equals λ_f at solution samples."""
        witnesses = []
        checked = 0
        if self.dim == 0:
            for z in self.zeros:
                for x in z.points:
                    lam = lambda_f(self.section, self.multisection, x)
                    theta = sum((y.weight for y in self.zeros
                                 if any(np.max(np.abs(p - x)) <= MATCH_TOL for p in y.points)), Fraction(0))
                    checked += 1
                    if lam != theta:
                        witnesses.append({"x": x, "theta": theta, "lambda": lam})
        else:
            s = self.structure()
            if s is not None:
                # polished vertices lie on the zero set; chord interiors only approximate it
                pts = np.vstack([z.points for z in self.zeros if len(z.points)])
                seams = np.vstack([z.seams for z in self.zeros])
                if len(seams):
                    near = np.min(np.linalg.norm(pts[:, None] - seams[None], axis=2), axis=1)
                    pts = pts[near > MATCH_TOL]
                for x, theta in zip(pts, s.theta_many(pts)):
                    lam = lambda_f(self.section, self.multisection, x)
                    checked += 1
                    if lam != theta:
                        witnesses.append({"x": x, "theta": theta, "lambda": lam})
        return Report("theta_equals_lambda", not witnesses, {"samples": checked}, witnesses=witnesses[:4])


def solve(f: ToySection, m: Multisection, resolution: int = 64) -> SolutionSet:
    N, r = f.base_dim, f.rank
    if m.sections[0].arity != N or m.sections[0].coarity != r:
        raise ValueError("multisection and section have different shapes")
    dim = N - r
    if dim == 0:
        finder = _roots_1d if N == 1 else _roots_newton
    elif dim == 1 and N == 2:
        finder = _curves_2d
    else:
        raise NotImplementedError("supported cases: N = r, or N = 2 with r = 1")
    out = SolutionSet(f, m, dim)
    for j, (s, w) in enumerate(zip(m.sections, m.weights)):
        g = _difference(f.f, s)
        out.zeros.append(finder(j, w, g, f, resolution))
    return out


# -- isolated zeros ----------------------------------------------------------


def _check_endpoint(g, f: ToySection, x):
    if np.max(np.abs(g(np.asarray(x, dtype=float)))) <= TRANSVERSALITY_FLOOR:
        raise PropernessError("a zero sits on the box boundary", x)


def _roots_1d(j, w, g: SmoothMap, f: ToySection, resolution: int) -> SectionZeros:
    a, b = f.box.lower[0], f.box.upper[0]
    for end in (a, b):
        _check_endpoint(g, f, [end])
    count = max(resolution, 16) * 64
    xs = np.linspace(a, b, count + 1)
    gv = g(xs[:, None])[:, 0]
    dv = g.jacobian(xs[:, None])[:, 0, 0]
    scalar = lambda t: float(g(np.array([t]))[0])
    slope = lambda t: float(g.jacobian(np.array([t]))[0, 0])
    roots = []
    for k in range(count):
        lo, hi = xs[k], xs[k + 1]
        if gv[k] == 0.0:
            roots.append(lo)
        elif gv[k] * gv[k + 1] < 0:
            roots.append(brentq(scalar, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))
        if dv[k] * dv[k + 1] < 0:
            c = brentq(slope, lo, hi, xtol=1e-15)
            if abs(scalar(c)) < TRANSVERSALITY_FLOOR:
                raise NotInGoodPosition("degenerate zero", [c])
    pts, signs = [], []
    for x in roots:
        for _ in range(3):
            d = slope(x)
            if d == 0.0:
                break
            step = scalar(x) / d
            if abs(step) > 1e-10:
                break
            x -= step
        d = slope(x)
        if abs(d) < TRANSVERSALITY_FLOOR:
            raise NotInGoodPosition("vanishing derivative", [x])
        if abs(scalar(x)) > 1e-10:
            raise NotInGoodPosition("root could not be polished", [x])
        pts.append([x])
        signs.append(1 if d > 0 else -1)
    return SectionZeros(j, w, np.array(pts).reshape(len(pts), 1), tuple(signs))


def _roots_newton(j, w, g: SmoothMap, f: ToySection, resolution: int) -> SectionZeros:
    N = f.base_dim
    lower, upper = np.asarray(f.box.lower), np.asarray(f.box.upper)
    seeds = Mesh(ParamDomain(intervals=tuple(zip(lower, upper))), resolution).centers
    x = seeds.copy()
    alive = np.ones(len(x), dtype=bool)
    for _ in range(60):
        J = g.jacobian(x[alive])
        r = g(x[alive])
        ok = np.abs(np.linalg.det(J)) > 1e-300
        step = np.zeros_like(r)
        step[ok] = np.linalg.solve(J[ok], r[ok][..., None])[..., 0]
        idx = np.flatnonzero(alive)
        x[idx] = x[idx] - step
        alive[idx[~ok]] = False
        outside = np.any((x < lower - 1e-3 * (upper - lower)) | (x > upper + 1e-3 * (upper - lower)), axis=1)
        alive &= ~outside
        if np.max(np.abs(step), initial=0.0) < 1e-14:
            break
    found = []
    for p in x[alive]:
        if np.max(np.abs(g(p))) > 1e-10:
            continue
        if any(np.max(np.abs(p - q)) < 1e-8 for q in found):
            continue
        found.append(p)
    found.sort(key=tuple)
    signs = []
    for p in found:
        if np.any((p < lower + 1e-9) | (p > upper - 1e-9)):
            raise PropernessError("a zero sits on the box boundary", p)
        d = np.linalg.det(g.jacobian(p))
        if abs(d) < TRANSVERSALITY_FLOOR:
            raise NotInGoodPosition("singular derivative", p)
        signs.append(1 if d > 0 else -1)
    return SectionZeros(j, w, np.array(found).reshape(len(found), N), tuple(signs))


# -- solution curves -----------------------------------------------------------


def _polish(g: SmoothMap, x: np.ndarray, fixed_axis: int | None = None) -> np.ndarray:
    """Newton projection onto {g = 0}, optionally keeping one coordinate fixed."""
    x = np.array(x, dtype=float)
    for _ in range(20):
        val = g(x)[0]
        grad = g.jacobian(x)[0]
        if fixed_axis is not None:
            grad = grad.copy()
            grad[fixed_axis] = 0.0
        nrm = grad @ grad
        if nrm < TRANSVERSALITY_FLOOR**2:
            raise NotInGoodPosition("vanishing gradient on the solution curve", x)
        step = val / nrm * grad
        x = x - step
        if np.max(np.abs(step)) < POLISH_TOL:
            break
    return x


def _polyline_map(V: np.ndarray, periodic: bool) -> SmoothMap:
    M = len(V) - 1
    d = V[1:] - V[:-1]

    def components(xs):
        t = xs[0]
        prim = t
        while isinstance(prim, Dual):
            prim = prim.re
        prim = np.asarray(prim, dtype=float)
        if periodic:
            shift = M * np.floor(prim / M)
            t, prim = t - shift, prim - shift
        k = np.clip(np.floor(prim), 0, M - 1).astype(int)
        frac = t - k
        return [V[k, i] + frac * d[k, i] for i in range(V.shape[1])]

    return SmoothMap(components, 1, V.shape[1])


def _orientation(branch: Branch, g: SmoothMap) -> int:
    t = np.array([[0.5]])
    T = branch.frame(t)[0, :, 0]
    grad = g.jacobian(branch.points(t))[0, 0]
    det = T[0] * grad[1] - T[1] * grad[0]
    if abs(det) < TRANSVERSALITY_FLOOR:
        raise NotInGoodPosition("curve tangent parallel to the gradient", branch.points(t)[0])
    return 1 if det > 0 else -1


def _curves_2d(j, w, g: SmoothMap, f: ToySection, resolution: int) -> SectionZeros:
    lo, hi = np.asarray(f.box.lower, float), np.asarray(f.box.upper, float)
    R = resolution
    gx = np.linspace(lo[0], hi[0], R + 1)
    gy = np.linspace(lo[1], hi[1], R + 1)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    G = g(np.stack([X.ravel(), Y.ravel()], axis=1))[:, 0].reshape(R + 1, R + 1)
    pos = G >= 0

    crossings: dict[tuple, np.ndarray] = {}

    def crossing(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in crossings:
            pa = np.array([gx[key[0][0]], gy[key[0][1]]])
            pb = np.array([gx[key[1][0]], gy[key[1][1]]])
            phi = lambda s: float(g(pa + s * (pb - pa))[0])
            s = brentq(phi, 0.0, 1.0, xtol=1e-15)
            crossings[key] = pa + s * (pb - pa)
        return key

    adjacency: dict[tuple, list[tuple]] = {}
    for i in range(R):
        for k in range(R):
            corners = [(i, k), (i + 1, k), (i + 1, k + 1), (i, k + 1)]
            cut = [
                crossing(corners[e], corners[(e + 1) % 4])
                for e in range(4)
                if pos[corners[e]] != pos[corners[(e + 1) % 4]]
            ]
            if len(cut) == 2:
                pairs = [(cut[0], cut[1])]
            elif len(cut) == 4:
                centre = g(np.array([(gx[i] + gx[i + 1]) / 2, (gy[k] + gy[k + 1]) / 2]))[0] >= 0
                # join the crossings around the corners whose sign differs from the centre
                pairs = [(cut[0], cut[1]), (cut[2], cut[3])] if centre == pos[corners[0]] else [
                    (cut[1], cut[2]), (cut[3], cut[0])]
            else:
                pairs = []
            for a, b in pairs:
                adjacency.setdefault(a, []).append(b)
                adjacency.setdefault(b, []).append(a)

    def boundary_face(key):
        (a, b) = key
        for axis in range(2):
            if a[axis] == b[axis] and a[axis] in (0, R):
                return axis, "lower" if a[axis] == 0 else "upper"
        return None

    seen: set[tuple] = set()
    curves = []
    starts = [k for k, v in adjacency.items() if len(v) == 1] + list(adjacency)
    for start in starts:
        if start in seen:
            continue
        path = [start]
        seen.add(start)
        prev, cur = None, start
        closed = False
        while True:
            nxt = [n for n in adjacency[cur] if n != prev]
            if not nxt:
                break
            if nxt[0] == start:
                closed = True
                break
            if nxt[0] in seen:
                break
            prev, cur = cur, nxt[0]
            path.append(cur)
            seen.add(cur)
        curves.append((path, closed))

    branches, seams = [], []
    for path, closed in curves:
        ends = [] if closed else [path[0], path[-1]]
        fixed = {}
        for e in ends:
            face = boundary_face(e)
            if face is None:
                raise PropernessError("solution curve ends inside the box", crossings[e])
            axis, side = face
            if side != "lower" or axis not in f.corners:
                raise PropernessError("solution curve leaves through a non-boundary face", crossings[e])
            fixed[e] = axis
        V = np.array([_polish(g, crossings[p], fixed.get(p)) for p in path])
        if closed:
            if len(V) < 3:
                continue
            V = np.vstack([V, V[:1]])
            b = Branch(_polyline_map(V, True), ParamDomain(intervals=((0.0, float(len(V) - 1)),),
                                                           periodic=(True,)), resolution=len(V) - 1)
            branches.append(b.with_orientation(_orientation(b, g)))
            continue
        if len(V) == 2:
            mid = _polish(g, (V[0] + V[1]) / 2)
            V = np.array([V[0], mid, V[1]])
        h = (len(V) - 1) // 2
        seams.append(V[h])
        for piece in (V[: h + 1], V[h:][::-1]):
            steps = len(piece) - 1
            b = Branch(_polyline_map(piece, False), ParamDomain(corners=(float(steps),)),
                       resolution=steps)
            branches.append(b.with_orientation(_orientation(b, g)))
    pts = np.vstack([b.points(b.vertices()) for b in branches]) if branches else np.zeros((0, 2))
    return SectionZeros(j, w, pts, tuple(b.orientation for b in branches), tuple(branches),
                        np.array(seams).reshape(len(seams), 2))


# ---------------------------------------------------------------------------
# invariants


def _zero_form_values(omega, pts: np.ndarray):
    if isinstance(omega, DifferentialForm):
        if omega.degree != 0:
            raise ValueError("isolated solutions integrate 0-forms")
        return [float(v) for v in omega(pts)] if len(pts) else []
    c = Fraction(omega)
    return [c] * len(pts)


def invariant_psi(f: ToySection, m: Multisection, omega, tau=None, cover=None,
                  resolution: int = 64, solution: SolutionSet | None = None):
    """Ψ_f(ω, τ).

    Isolated solutions: Σ σ_j · sign · ω(x), exact when ω is a constant.
    Solution curves: the measure of ω minus the boundary measure of τ.
    """
    sol = solution or solve(f, m, resolution)
    if sol.dim == 0:
        total = []
        for z in sol.zeros:
            for sign, v in zip(z.signs, _zero_form_values(omega, z.points)):
                total.append(z.weight * sign * v)
        if all(isinstance(t, Fraction) for t in total):
            return sum(total, Fraction(0))
        return math.fsum(float(t) for t in total)
    s = sol.structure()
    if s is None:
        return 0.0
    value = global_measure(s, omega, cover).value
    if tau is not None:
        value -= global_boundary_measure(s, tau, cover).value
    return value


def _freeze(homotopy: SmoothMap, t: float) -> SmoothMap:
    N = homotopy.arity - 1
    return SmoothMap(lambda xs: homotopy.apply(list(xs) + [t + 0.0 * xs[0]]), N, homotopy.coarity)


def _rim_samples(box: Box, corners: tuple[int, ...], per_face: int = 257) -> np.ndarray:
    """Points on the faces of the box that are not boundary faces."""
    lo, hi = np.asarray(box.lower, float), np.asarray(box.upper, float)
    N = len(lo)
    if N == 1:
        pts = [[hi[0]]] + ([] if 0 in corners else [[lo[0]]])
        return np.array(pts)
    out = []
    axes = [np.linspace(lo[k], hi[k], per_face) for k in range(N)]
    for k in range(N):
        for side, value in (("lower", lo[k]), ("upper", hi[k])):
            if side == "lower" and k in corners:
                continue
            grid = np.meshgrid(*[axes[i] if i != k else np.array([value]) for i in range(N)], indexing="ij")
            out.append(np.stack([g.ravel() for g in grid], axis=1))
    return np.vstack(out)


def homotopy_invariance_check(
    homotopy: SmoothMap,
    box: Box,
    m: Multisection,
    omega,
    tau=None,
    steps: int = 21,
    corners: Sequence[int] = (),
    tol: float = 1e-9,
    resolution: int = 64,
    f0: SmoothMap | None = None,
    f1: SmoothMap | None = None,
) -> Report:
    """Ψ along f_t = homotopy(·, t), t ∈ [0, 1]; constant for a proper homotopy."""
    if homotopy.arity != box.dim + 1:
        raise ValueError("the homotopy takes the base point and t")
    witnesses = []
    for label, given, t in (("f0", f0, 0.0), ("f1", f1, 1.0)):
        if given is not None:
            pts = box.sample(32, offset=41)
            if np.max(np.abs(given(pts) - _freeze(homotopy, t)(pts))) > 1e-12:
                witnesses.append({"kind": "endpoint-mismatch", "end": label})
    ts = np.linspace(0.0, 1.0, steps)
    values, flagged = [], []
    rim = _rim_samples(box, tuple(corners))
    previous = None
    for t in ts:
        section = ToySection(_freeze(homotopy, float(t)), box, tuple(corners))
        if homotopy.coarity == 1 and len(rim):
            signs = [np.sign(section.f(rim)[:, 0] - s(rim)[:, 0]) for s in m.sections]
            if previous is not None:
                for a, b in zip(previous, signs):
                    flip = np.flatnonzero(a * b < 0)
                    if len(flip):
                        witnesses.append({"kind": "properness", "t": float(t), "x": rim[flip[0]]})
            previous = signs
        try:
            values.append(invariant_psi(section, m, omega, tau, resolution=resolution))
        except NotInGoodPosition as e:
            flagged.append({"t": float(t), "reason": str(e)})
            values.append(None)
        except PropernessError as e:
            witnesses.append({"kind": "properness", "t": float(t), "x": e.witness})
            values.append(None)
    good = [v for v in values if v is not None]
    spread = max((abs(float(v) - float(good[0])) for v in good), default=0.0)
    ok = not witnesses and spread <= tol and bool(good)
    return Report(
        "homotopy_invariance", ok,
        {"t": ts, "psi": [v if v is not None else "flagged" for v in values],
         "max_deviation": spread, "flagged": flagged},
        tolerance=tol, witnesses=witnesses,
    )
