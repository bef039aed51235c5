"""Charts with finite group actions, parameter domains with corners, branches.

A chart is an open box or ball in ℝᴺ on which a finite group acts by smooth
maps.  A branch is an oriented n-dimensional parametrized patch
Φ: Q → ℝᴺ whose parameter domain Q is a box in [0, ∞)^d × ℝ^{n-d}.  Only the
corner coordinates (the first d) carry boundary; the finite ends of the
ℝ-factors are chart cutoffs and never contribute boundary faces.
"""

from __future__ import annotations

import itertools
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.spatial import cKDTree

from . import sampling
from .expr import SmoothMap
from .report import Report

DEGENERACY_TOL = 1e-12
INEFFECTIVE_TOL = 1e-9
INEFFECTIVE_SAMPLES = 64


# ---------------------------------------------------------------------------
# ambient domains


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("box bounds of different length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("degenerate box")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.upper, self.lower)))

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= np.array(self.lower) - tol) & (x <= np.array(self.upper) + tol), axis=1)

    def sample(self, n: int, offset: int = 0) -> np.ndarray:
        u = sampling.halton(n, self.dim, offset)
        lo, hi = np.array(self.lower), np.array(self.upper)
        return lo + u * (hi - lo)


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.linalg.norm(x - np.array(self.center), axis=1) <= self.radius + tol

    def sample(self, n: int, offset: int = 0) -> np.ndarray:
        out = np.zeros((0, self.dim))
        k = 4 * n
        while len(out) < n:
            u = 2.0 * sampling.halton(k, self.dim, offset) - 1.0
            out = u[np.linalg.norm(u, axis=1) < 1.0]
            k *= 2
        return np.array(self.center) + self.radius * out[:n]


# ---------------------------------------------------------------------------
# parameter domains and meshes


@dataclass(frozen=True)
class ParamDomain:
    """Q = Π[0, b_j] × Π[a_k, c_k], corner factors first.

    ``periodic[k]`` identifies the ends of the k-th interval factor.
    """

    corners: tuple[float, ...] = ()
    intervals: tuple[tuple[float, float], ...] = ()
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "corners", tuple(float(b) for b in self.corners))
        object.__setattr__(
            self, "intervals", tuple((float(a), float(c)) for a, c in self.intervals)
        )
        if not self.periodic:
            object.__setattr__(self, "periodic", (False,) * len(self.intervals))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if len(self.periodic) != len(self.intervals):
            raise ValueError("one periodic flag per interval factor")
        if any(b <= 0 for b in self.corners):
            raise ValueError("corner factors must be nondegenerate intervals [0, b], b > 0")
        if any(a >= c for a, c in self.intervals):
            raise ValueError("interval factors must be nondegenerate")

    @property
    def d(self) -> int:
        return len(self.corners)

    @property
    def n(self) -> int:
        return len(self.corners) + len(self.intervals)

    @property
    def lower(self) -> np.ndarray:
        return np.array([0.0] * self.d + [a for a, _ in self.intervals])

    @property
    def upper(self) -> np.ndarray:
        return np.array(list(self.corners) + [c for _, c in self.intervals])

    @property
    def periodic_mask(self) -> np.ndarray:
        return np.array([False] * self.d + list(self.periodic), dtype=bool)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def wrap(self, q: np.ndarray) -> np.ndarray:
        """Reduce periodic coordinates and clamp the others into Q."""
        q = np.array(q, dtype=float, copy=True)
        lo, hi, per = self.lower, self.upper, self.periodic_mask
        if per.any():
            q[..., per] = lo[per] + np.mod(q[..., per] - lo[per], (hi - lo)[per])
        q[..., ~per] = np.clip(q[..., ~per], lo[~per], hi[~per])
        return q

    def contains(self, q, tol: float = DEGENERACY_TOL) -> np.ndarray:
        q = np.atleast_2d(q)
        per = self.periodic_mask
        inside = (q >= self.lower - tol) & (q <= self.upper + tol)
        return np.all(inside | per, axis=1)

    def face(self, j: int) -> "ParamDomain":
        """Domain of the face where corner coordinate ``j`` is frozen at 0."""
        if not 0 <= j < self.d:
            raise IndexError("faces exist only for corner coordinates")
        return ParamDomain(self.corners[:j] + self.corners[j + 1 :], self.intervals, self.periodic)


def degeneracy_index(Q: ParamDomain, q) -> int:
    """Number of corner coordinates of ``q`` that vanish (within 1e-12)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (Q.n,) or not Q.contains(q)[0]:
        raise ValueError(f"point {q.tolist()} is not in the parameter domain")
    return int(np.sum(np.abs(q[: Q.d]) <= DEGENERACY_TOL))


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class Cell:
    index: int
    lower: np.ndarray
    upper: np.ndarray

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


class Mesh(Sequence):
    """Axis-aligned tensor grid of ``resolution`` cells per axis."""

    def __init__(self, domain: ParamDomain, resolution: int):
        if resolution < 1:
            raise ValueError("resolution must be >= 1")
        self.domain = domain
        self.resolution = resolution
        n = domain.n
        self.spacing = (domain.upper - domain.lower) / resolution
        idx = np.indices((resolution,) * n).reshape(n, -1).T if n else np.zeros((1, 0), dtype=int)
        # shared edges: neighbouring cells meet exactly and the outer faces are the bounds
        edges = np.linspace(domain.lower, domain.upper, resolution + 1, axis=1) if n \
            else np.zeros((0, resolution + 1))
        axes = np.arange(n)
        self.lower = edges[axes, idx] if n else np.zeros((1, 0))
        self.upper = edges[axes, idx + 1] if n else np.zeros((1, 0))

    def __len__(self) -> int:
        return len(self.lower)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        return Cell(int(i), self.lower[i], self.upper[i])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def volumes(self) -> np.ndarray:
        return np.prod(self.upper - self.lower, axis=1)

    def quadrature(self, order: int = 5) -> tuple[np.ndarray, np.ndarray]:
        """Tensor Gauss–Legendre nodes ``(C, K, n)`` and weights ``(C, K)``."""
        n = self.domain.n
        x, w = gauss_legendre(order)
        combos = list(itertools.product(x, repeat=n))
        ref = np.array(combos, dtype=float).reshape(len(combos), n)
        refw = np.array([np.prod(c) for c in itertools.product(w, repeat=n)])
        size = self.upper - self.lower
        nodes = self.lower[:, None, :] + ref[None, :, :] * size[:, None, :]
        weights = refw[None, :] * np.prod(size, axis=1)[:, None]
        return nodes, weights

    def vertices(self) -> np.ndarray:
        axes = []
        per = self.domain.periodic_mask
        for k in range(self.domain.n):
            pts = np.linspace(self.domain.lower[k], self.domain.upper[k], self.resolution + 1)
            axes.append(pts[:-1] if per[k] else pts)
        if not axes:
            return np.zeros((1, 0))
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)

    def locate(self, q) -> np.ndarray:
        """Index of the cell containing each parameter point."""
        q = self.domain.wrap(np.atleast_2d(q))
        n = self.domain.n
        if n == 0:
            return np.zeros(len(q), dtype=int)
        k = np.floor((q - self.domain.lower) / self.spacing).astype(int)
        k = np.clip(k, 0, self.resolution - 1)
        return np.ravel_multi_index(k.T, (self.resolution,) * n)


def mesh_domain(Q: ParamDomain, resolution: int) -> Mesh:
    return Mesh(Q, resolution)


# ---------------------------------------------------------------------------
# charts and group actions


@dataclass(frozen=True)
class EffectiveQuotient:
    ineffective: tuple[int, ...]
    group_order: int

    @property
    def order(self) -> int:
        """#G_e = |G| / |G₀|."""
        return self.group_order // len(self.ineffective)


class Chart:
    """Open box or ball in ℝᴺ with a finite group acting by diffeomorphisms.

    ``table[g][h]`` is the index of the product ``g·h``, meaning φ_g ∘ φ_h.
    """

    def __init__(
        self,
        domain: Box | Ball,
        elements: Sequence[SmoothMap] | None = None,
        table: Sequence[Sequence[int]] | None = None,
        identity: int = 0,
        names: Sequence[str] | None = None,
        check: bool = True,
    ):
        self.domain = domain
        self.dim = domain.dim
        if elements is None:
            elements = [SmoothMap.identity(self.dim)]
            table = [[0]]
        self.elements = list(elements)
        for g in self.elements:
            if g.arity != self.dim or g.coarity != self.dim:
                raise ValueError("group elements must map ℝᴺ to ℝᴺ")
        if table is None:
            table = _derive_table(self.elements, domain)
        self.table = [list(map(int, row)) for row in table]
        self.identity = identity
        self.names = list(names) if names is not None else [f"g{i}" for i in range(len(self.elements))]
        check_group_table(self.table, identity)
        if check:
            self._check_action()

    @classmethod
    def from_matrices(cls, domain, matrices, names=None) -> "Chart":
        elements = [SmoothMap.linear(m) for m in matrices]
        return cls(domain, elements, names=names)

    @property
    def order(self) -> int:
        return len(self.elements)

    def act(self, g: int, x) -> np.ndarray:
        return self.elements[g](x)

    def inverse(self, g: int) -> int:
        return self.table[g].index(self.identity)

    def _check_action(self):
        pts = self.domain.sample(16, offset=101)
        for g, phi in enumerate(self.elements):
            if g == self.identity and np.max(np.abs(phi(pts) - pts)) > INEFFECTIVE_TOL:
                raise ValueError("the identity element does not act as the identity map")
            det = np.linalg.det(phi.jacobian(pts))
            if np.min(np.abs(det)) <= 1e-12:
                raise ValueError(f"element {self.names[g]} is not a local diffeomorphism")
        for g, h in itertools.product(range(self.order), repeat=2):
            gh = self.table[g][h]
            lhs = self.elements[g](self.elements[h](pts))
            rhs = self.elements[gh](pts)
            if np.max(np.abs(lhs - rhs)) > 1e-9:
                raise ValueError(
                    f"φ_{self.names[g]}∘φ_{self.names[h]} differs from φ_{self.names[gh]}"
                )

    @cached_property
    def effective(self) -> EffectiveQuotient:
        pts = self.domain.sample(INEFFECTIVE_SAMPLES, offset=7)
        g0 = tuple(
            g for g, phi in enumerate(self.elements)
            if np.max(np.abs(phi(pts) - pts)) <= INEFFECTIVE_TOL
        )
        if not is_normal_subgroup(self.table, g0):
            raise ValueError("detected ineffective part is not a normal subgroup")
        return EffectiveQuotient(g0, self.order)

    def ineffective_on(self, subgroup: Sequence[int], points: np.ndarray) -> tuple[int, ...]:
        """Elements of ``subgroup`` acting as the identity at all ``points``."""
        return tuple(
            g for g in subgroup
            if np.max(np.abs(self.elements[g](points) - points)) <= INEFFECTIVE_TOL
        )

    def stabilizer(self, x, tol: float = 1e-9) -> tuple[int, ...]:
        x = np.asarray(x, dtype=float)
        return tuple(
            g for g, phi in enumerate(self.elements) if np.linalg.norm(phi(x) - x) <= tol
        )

    def subgroup(self, members: Sequence[int], domain=None) -> "Chart":
        """The chart of a subgroup, optionally on a smaller domain."""
        members = sorted(members)
        pos = {g: i for i, g in enumerate(members)}
        table = [[pos[self.table[g][h]] for h in members] for g in members]
        return Chart(
            domain or self.domain,
            [self.elements[g] for g in members],
            table,
            identity=pos[self.identity],
            names=[self.names[g] for g in members],
            check=False,
        )

    def cosets(self, subgroup: Sequence[int]) -> list[int]:
        """One representative per left coset gH."""
        seen: set[int] = set()
        reps = []
        for g in range(self.order):
            if g in seen:
                continue
            reps.append(g)
            seen.update(self.table[g][h] for h in subgroup)
        return reps


def check_group_table(table: Sequence[Sequence[int]], identity: int = 0) -> None:
    """Exact group axioms on a multiplication table; raises ValueError."""
    n = len(table)
    if n == 0 or any(len(row) != n for row in table):
        raise ValueError("multiplication table must be square and nonempty")
    if not 0 <= identity < n:
        raise ValueError("identity index out of range")
    for g in range(n):
        for h in range(n):
            if not 0 <= table[g][h] < n:
                raise ValueError(f"table entry ({g},{h}) is not a group element")
    for g in range(n):
        if table[identity][g] != g or table[g][identity] != g:
            raise ValueError(f"identity law fails for element {g}")
        if not any(table[g][h] == identity and table[h][g] == identity for h in range(n)):
            raise ValueError(f"element {g} has no inverse")
    for a, b, c in itertools.product(range(n), repeat=3):
        if table[table[a][b]][c] != table[a][table[b][c]]:
            raise ValueError(f"associativity fails for ({a},{b},{c})")


def is_normal_subgroup(table, members) -> bool:
    members = set(members)
    n = len(table)
    e = next(k for k in range(n) if all(table[k][g] == g for g in range(n)))
    if e not in members or any(table[a][b] not in members for a in members for b in members):
        return False
    for g in range(n):
        ginv = table[g].index(e)
        if any(table[table[g][m]][ginv] not in members for m in members):
            return False
    return True


def _derive_table(elements: Sequence[SmoothMap], domain) -> list[list[int]]:
    pts = domain.sample(16, offset=103)
    images = [phi(pts) for phi in elements]
    table = []
    for g in elements:
        row = []
        for h_img in images:
            comp = g(h_img)
            errs = [np.max(np.abs(comp - img)) for img in images]
            k = int(np.argmin(errs))
            if errs[k] > 1e-9:
                raise ValueError("group elements are not closed under composition")
            row.append(k)
        table.append(row)
    return table


# ---------------------------------------------------------------------------
# branches


@dataclass(frozen=True, eq=False)
class Branch:
    """Oriented parametrized patch Φ: Q → ℝᴺ."""

    param: SmoothMap
    domain: ParamDomain
    orientation: int = 1
    resolution: int = 8
    name: str = ""

    def __post_init__(self):
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        if self.param.arity != self.domain.n:
            raise ValueError("parametrization arity differs from the domain dimension")

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def ambient_dim(self) -> int:
        return self.param.coarity

    @cached_property
    def mesh(self) -> Mesh:
        return Mesh(self.domain, self.resolution)

    def refined(self, resolution: int) -> "Branch":
        return Branch(self.param, self.domain, self.orientation, resolution, self.name)

    def with_orientation(self, sign: int) -> "Branch":
        return Branch(self.param, self.domain, sign, self.resolution, self.name)

    def pushed(self, phi: SmoothMap, name: str | None = None) -> "Branch":
        """The branch φ ∘ Φ."""
        return Branch(phi.compose(self.param), self.domain, self.orientation, self.resolution,
                      name if name is not None else self.name)

    def points(self, q) -> np.ndarray:
        return self.param(q)

    def frame(self, q) -> np.ndarray:
        return self.param.jacobian(q)

    def nodes(self, order: int = 5, cells=None) -> tuple[np.ndarray, np.ndarray]:
        """Flattened quadrature nodes and weights, optionally for selected cells."""
        nodes, weights = self.mesh.quadrature(order)
        if cells is not None:
            nodes, weights = nodes[cells], weights[cells]
        return nodes.reshape(weights.size, self.n), weights.reshape(-1)

    def vertices(self, resolution: int | None = None) -> np.ndarray:
        mesh = self.mesh if resolution is None else Mesh(self.domain, resolution)
        return mesh.vertices()

    def boundary_faces(self) -> list["BoundaryFace"]:
        return [
            BoundaryFace(self, j, self.domain.face(j), self.orientation * (-1) ** (j + 1))
            for j in range(self.domain.d)
        ]

    def cell_diameter_bound(self) -> float:
        """Largest ambient distance between opposite corners of a mesh cell."""
        mesh = self.mesh
        lo = self.param(mesh.lower) if self.n else self.param(np.zeros((1, 0)))
        hi = self.param(mesh.upper) if self.n else lo
        best = np.max(np.linalg.norm(hi - lo, axis=1))
        # the diagonal alone undercounts for curved cells; include edge midpoints
        mid = self.param(mesh.centers)
        best = max(best, 2 * np.max(np.linalg.norm(mid - lo, axis=1)))
        return float(best)

    def check(self, chart: Chart | None = None, order: int = 5) -> Report:
        """Immersion, injectivity and containment at the quadrature nodes."""
        q, _ = self.nodes(order)
        witnesses = []
        J = self.frame(q)
        sv = np.linalg.svd(J, compute_uv=False) if self.n else np.ones((len(q), 1))
        rank_ok = sv[:, -1] > 1e-12 * np.maximum(sv[:, 0], 1.0)
        if not rank_ok.all():
            k = int(np.argmin(rank_ok))
            witnesses.append({"kind": "rank", "q": q[k]})
        x = self.points(q)
        pairs = cKDTree(x).query_pairs(1e-9)
        if pairs:
            a, b = sorted(pairs)[0]
            witnesses.append({"kind": "injectivity", "q": [q[a], q[b]]})
        if chart is not None:
            inside = chart.domain.contains(x)
            if not inside.all():
                k = int(np.argmin(inside))
                witnesses.append({"kind": "outside-chart", "q": q[k], "x": x[k]})
        return Report("branch_check", not witnesses, {"name": self.name}, witnesses=witnesses)

    # -- closest points -------------------------------------------------

    @cached_property
    def _seeds(self) -> tuple[np.ndarray, np.ndarray, cKDTree]:
        per_axis = {0: 1, 1: 512, 2: 64}.get(self.n, 16)
        per_axis = max(per_axis, 4 * self.resolution) if self.n else 1
        q = Mesh(self.domain, per_axis).vertices()
        if self.n:
            mids = Mesh(self.domain, per_axis).centers
            q = np.vstack([q, mids])
        x = self.points(q)
        return q, x, cKDTree(x)

    def project(self, y, iterations: int = 40) -> tuple[np.ndarray, np.ndarray]:
        """Closest parameter point and ambient distance for each target point."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        seeds_q, _, tree = self._seeds
        _, idx = tree.query(y)
        q = seeds_q[idx].copy()
        if self.n == 0:
            return q, np.linalg.norm(self.points(q) - y, axis=1)
        dist = np.linalg.norm(self.points(q) - y, axis=1)
        eye = np.eye(self.n)
        for _ in range(iterations):
            r = self.points(q) - y
            J = self.frame(q)
            g = np.einsum("pki,pk->pi", J, r)
            H = np.einsum("pki,pkj->pij", J, J)
            H = H + (1e-14 * np.trace(H, axis1=1, axis2=2)[:, None, None] + 1e-300) * eye
            step = -np.linalg.solve(H, g[..., None])[..., 0]
            improved = np.zeros(len(q), dtype=bool)
            t = 1.0
            q_new = q.copy()
            for _ in range(8):
                trial = self.domain.wrap(q + t * step)
                d_trial = np.linalg.norm(self.points(trial) - y, axis=1)
                better = (d_trial <= dist) & ~improved
                q_new[better] = trial[better]
                dist = np.where(better, d_trial, dist)
                improved |= better
                if improved.all():
                    break
                t *= 0.5
            moved = np.max(np.abs(q_new - q)) if len(q) else 0.0
            q = q_new
            if moved < 1e-15:
                break
        return q, dist

    def distance(self, y) -> np.ndarray:
        return self.project(y)[1]


@dataclass(frozen=True, eq=False)
class BoundaryFace:
    """Face of a branch where corner coordinate ``index`` (0-based) is 0.

    ``orientation`` follows the outward-normal-first rule: the face frame is
    positive when (outward normal, face frame) is positive for the branch.
    """

    branch: Branch
    index: int
    domain: ParamDomain
    orientation: int

    @property
    def n(self) -> int:
        return self.domain.n

    @cached_property
    def mesh(self) -> Mesh:
        return Mesh(self.domain, self.branch.resolution)

    def lift(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        p = p.reshape(len(p) if p.ndim == 2 else 1, self.n)
        return np.insert(p, self.index, 0.0, axis=1)

    def points(self, p) -> np.ndarray:
        return self.branch.points(self.lift(p))

    def frame(self, p) -> np.ndarray:
        J = self.branch.frame(self.lift(p))
        return np.delete(J, self.index, axis=2)

    def nodes(self, order: int = 5, cells=None) -> tuple[np.ndarray, np.ndarray]:
        nodes, weights = self.mesh.quadrature(order)
        if cells is not None:
            nodes, weights = nodes[cells], weights[cells]
        return nodes.reshape(weights.size, self.n), weights.reshape(-1)


def boundary_faces(b: Branch) -> list[BoundaryFace]:
    return b.boundary_faces()


def branch_from_graph(
    tangent_frame, A: SmoothMap, Q: ParamDomain, orientation: int = 1,
    resolution: int = 8, name: str = "", tol: float = 1e-9,
) -> Branch:
    """Graph parametrization q ↦ F q + A(q) with A(0) = 0 and DA(0) = 0."""
    F = np.asarray(tangent_frame, dtype=float)
    N, n = F.shape
    if A.arity != n or A.coarity != N or Q.n != n:
        raise ValueError("tangent frame, correction map and domain disagree in dimension")
    zero = np.zeros(n)
    if np.max(np.abs(A(zero)), initial=0.0) > tol:
        raise ValueError("graph correction must vanish at the origin: A(0) != 0")
    if np.max(np.abs(A.jacobian(zero)), initial=0.0) > tol:
        raise ValueError("graph correction must be tangent at the origin: DA(0) != 0")

    def components(qs):
        a = A.apply(qs)
        return [sum((F[i, j] * qs[j] for j in range(n) if F[i, j] != 0), 0.0) + a[i] for i in range(N)]

    return Branch(SmoothMap(components, n, N), Q, orientation, resolution, name)


def check_group_invariance(chart: Chart, branches: Sequence[Branch]) -> Report:
    """Do group elements map mesh vertices back onto the union of meshes?

    The tolerance is the largest ambient cell diameter, i.e. the resolution of
    the vertex sample itself.
    """
    verts = [b.points(b.vertices()) for b in branches]
    allv = np.vstack(verts)
    tree = cKDTree(allv)
    bound = max(b.cell_diameter_bound() for b in branches)
    worst = 0.0
    witnesses = []
    for g, phi in enumerate(chart.elements):
        img = phi(allv)
        d, _ = tree.query(img)
        k = int(np.argmax(d))
        if d[k] > worst:
            worst = float(d[k])
        if d[k] > bound:
            witnesses.append({"element": chart.names[g], "x": allv[k], "image": img[k], "violation": d[k]})
    return Report(
        "check_group_invariance",
        not witnesses,
        {"max_violation": worst, "mesh_bound": bound},
        tolerance=bound,
        witnesses=witnesses,
    )
