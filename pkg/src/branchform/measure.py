"""Signed measures of weighted branched structures.

For a region K (a union of parameter-mesh cells, or the cells whose centres
satisfy an ambient predicate) the chart measure is

    μ_ω(K) = (1 / #G_e) · Σ_i σ_i ∫_{K_i} ω|M_i

with #G_e and σ_i kept as exact rationals until the final product.  Branch
integrals use tensor Gauss–Legendre quadrature, evaluated in fixed-size cell
chunks and reduced with ``math.fsum`` so that the result does not depend on
the number of worker threads.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .branched import BranchingStructure, ThetaMismatchError, compare_theta
from .expr import SmoothMap
from .forms import DifferentialForm, exterior_derivative, invariance_defect
from .geometry import Ball, Box, BoundaryFace, Branch, Chart
from .report import Report
from . import sampling

CHUNK_CELLS = 64
DEFAULT_ORDER = 5


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class Region:
    """Cells per branch index, or an ambient predicate tested at cell centres.

    With neither given the region is the whole support.
    """

    cells: Mapping[int, Sequence[int]] | None = None
    predicate: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def whole(cls) -> "Region":
        return cls()

    @classmethod
    def from_cells(cls, cells: Mapping[int, Sequence[int]]) -> "Region":
        return cls(cells={int(k): tuple(int(c) for c in v) for k, v in cells.items()})

    @classmethod
    def from_predicate(cls, predicate) -> "Region":
        return cls(predicate=predicate)

    @classmethod
    def inside(cls, domain: Box | Ball) -> "Region":
        return cls(predicate=lambda x: domain.contains(x))

    def select(self, index: int, patch: Branch | BoundaryFace) -> np.ndarray:
        """Indices of the cells of ``patch`` (branch ``index`` or one of its faces)."""
        mesh = patch.mesh
        every = np.arange(len(mesh))
        if self.cells is None and self.predicate is None:
            return every
        if self.predicate is not None:
            keep = np.asarray(self.predicate(patch.points(mesh.centers)), dtype=bool)
            return every[keep]
        chosen = np.asarray(self.cells.get(index, ()), dtype=int)
        if isinstance(patch, BoundaryFace):
            parent = patch.branch.mesh.locate(patch.lift(mesh.centers))
            return every[np.isin(parent, chosen)]
        return np.unique(chosen)


WHOLE = Region()


@dataclass
class MeasureResult:
    value: float
    contributions: tuple[float, ...]
    prefactors: tuple[Fraction, ...]
    integrals: tuple[float, ...]
    error_estimate: float = 0.0
    effective_order: int = 1

    def __float__(self) -> float:
        return self.value


# ---------------------------------------------------------------------------
# quadrature


def _chunk_values(omega: DifferentialForm, patch, nodes, density):
    x = patch.points(nodes)
    F = patch.frame(nodes)
    vals = omega(x, *[F[:, :, a] for a in range(F.shape[2])])
    if density is not None:
        vals = vals * _density_values(density, x)
    return vals


def _density_values(density, x: np.ndarray) -> np.ndarray:
    if isinstance(density, SmoothMap):
        return density(x)[:, 0]
    v = density([x[:, i] for i in range(x.shape[1])])
    return np.broadcast_to(np.asarray(v, dtype=float), (len(x),))


def _patch_integral(omega, patch, cells, order, density, threads) -> float:
    if omega.degree != patch.n:
        raise ValueError(f"cannot integrate a {omega.degree}-form over a {patch.n}-dimensional patch")
    owner = patch.branch if isinstance(patch, BoundaryFace) else patch
    if omega.dim != owner.ambient_dim:
        raise ValueError("form and branch live in different ambient spaces")
    nodes, weights = patch.mesh.quadrature(order)
    cells = np.asarray(cells, dtype=int)
    if len(cells) == 0:
        return 0.0
    chunks = [cells[k : k + CHUNK_CELLS] for k in range(0, len(cells), CHUNK_CELLS)]

    def work(chunk):
        q = nodes[chunk].reshape(weights[chunk].size, patch.n)
        return weights[chunk].reshape(-1) * _chunk_values(omega, patch, q, density)

    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return patch.orientation * math.fsum(np.concatenate(parts).tolist())


def integrate_branch(
    omega: DifferentialForm,
    branch: Branch | BoundaryFace,
    region: Region | None = None,
    order: int = DEFAULT_ORDER,
    density=None,
    threads: int = 1,
    index: int = 0,
) -> float:
    """Oriented integral of ω over the selected cells of one branch (or face)."""
    region = region or WHOLE
    return _patch_integral(omega, branch, region.select(index, branch), order, density, threads)


# ---------------------------------------------------------------------------
# chart measures


def region_contains(s: BranchingStructure, region: Region, y: np.ndarray) -> np.ndarray:
    """Does each ambient point lie in a selected cell of some incident branch?"""
    mask, pre, _ = s.incidence(y)
    inside = np.zeros(len(y), dtype=bool)
    for j, bj in enumerate(s.branches):
        chosen = region.select(j, bj)
        inside |= mask[:, j] & np.isin(bj.mesh.locate(pre[j]), chosen)
    return inside


def check_saturation(s: BranchingStructure, region: Region, order: int = 2) -> Report:
    """Every group image of a region node lies in the region again."""
    if region.cells is None and region.predicate is None:
        return Report("saturation", True)
    witnesses = []
    for i, b in enumerate(s.branches):
        cells = region.select(i, b)
        if len(cells) == 0:
            continue
        x = b.points(b.nodes(order, cells)[0])
        for g, phi in enumerate(s.chart.elements):
            y = phi(x)
            inside = region_contains(s, region, y)
            if not inside.all():
                k = int(np.argmin(inside))
                witnesses.append({"element": s.chart.names[g], "branch": i, "x": x[k], "image": y[k]})
                break
    return Report("saturation", not witnesses, witnesses=witnesses)


def chart_measure(
    s: BranchingStructure,
    omega: DifferentialForm,
    region: Region | None = None,
    order: int = DEFAULT_ORDER,
    density=None,
    threads: int = 1,
    check: bool = True,
    estimate_error: bool = True,
) -> MeasureResult:
    """μ_ω(K) for one chart; raises ``ValueError`` for a non-saturated K."""
    region = region or WHOLE
    if omega.degree != s.n:
        raise ValueError(f"degree {omega.degree} differs from the branch dimension {s.n}")
    if check:
        sat = check_saturation(s, region)
        if not sat:
            raise SaturationError(sat.witnesses[0])
    return _measure(s, omega, [(i, b, b) for i, b in enumerate(s.branches)],
                    region, order, density, threads, estimate_error)


class SaturationError(ValueError):
    def __init__(self, witness):
        super().__init__(f"region is not saturated: {witness}")
        self.witness = witness


def _measure(s, omega, patches, region, order, density, threads, estimate_error) -> MeasureResult:
    ge = s.chart.effective.order
    prefactors, integrals, contributions, finer = [], [], [], []
    for i, patch, _ in patches:
        pre = Fraction(1, ge) * s.weights[i]
        cells = region.select(i, patch)
        I = _patch_integral(omega, patch, cells, order, density, threads)
        prefactors.append(pre)
        integrals.append(I)
        contributions.append(float(pre) * I)
        if estimate_error:
            finer.append(float(pre) * _patch_integral(omega, patch, cells, order + 1, density, threads))
    value = math.fsum(contributions)
    err = abs(value - math.fsum(finer)) if estimate_error else 0.0
    return MeasureResult(value, tuple(contributions), tuple(prefactors), tuple(integrals), err, ge)


def boundary_measure(
    s: BranchingStructure,
    tau: DifferentialForm,
    region: Region | None = None,
    order: int = DEFAULT_ORDER,
    density=None,
    threads: int = 1,
    estimate_error: bool = True,
) -> MeasureResult:
    """Boundary measure from the faces of all branches with induced orientation."""
    region = region or WHOLE
    if tau.degree != s.n - 1:
        raise ValueError(f"boundary forms have degree {s.n - 1}, got {tau.degree}")
    patches = [(i, f, b) for i, b in enumerate(s.branches) for f in b.boundary_faces()]
    return _measure(s, tau, patches, region, order, density, threads, estimate_error)


# ---------------------------------------------------------------------------
# partitions of unity


def _bump(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 / (r2[inside] - 1.0))
    return out


def _profile(U: Box | Ball, x: np.ndarray) -> np.ndarray:
    if isinstance(U, Ball):
        r2 = np.sum((x - np.asarray(U.center)) ** 2, axis=1) / U.radius**2
        return _bump(r2)
    lo, hi = np.asarray(U.lower), np.asarray(U.upper)
    c, h = (lo + hi) / 2, (hi - lo) / 2
    out = np.ones(len(x))
    for k in range(x.shape[1]):
        out = out * _bump(((x[:, k] - c[k]) / h[k]) ** 2)
    return out


class CoverGapError(ValueError):
    def __init__(self, witness):
        super().__init__(f"no cover set reaches the support point {np.asarray(witness).tolist()}")
        self.witness = np.asarray(witness)


class PartitionOfUnity:
    """Group-averaged bumps, normalised to sum to one on the support."""

    def __init__(self, chart: Chart, cover: Sequence[Box | Ball]):
        if not cover:
            raise ValueError("empty cover")
        for U in cover:
            if U.dim != chart.dim:
                raise ValueError("cover set of the wrong dimension")
        self.chart = chart
        self.cover = list(cover)

    def averaged(self, x) -> np.ndarray:
        """Unnormalised invariant bumps, shape ``(A, P)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        images = [phi(x) for phi in self.chart.elements]
        return np.array([
            sum(_profile(U, y) for y in images) / self.chart.order for U in self.cover
        ])

    def __call__(self, x) -> np.ndarray:
        f = self.averaged(x)
        total = f.sum(axis=0)
        if np.any(total <= 0):
            raise CoverGapError(np.atleast_2d(x)[int(np.argmin(total))])
        return f / total

    def function(self, alpha: int) -> Callable[[list], np.ndarray]:
        def g(xs):
            x = np.stack(np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in xs]), axis=-1)
            shape = x.shape[:-1]
            return self(x.reshape(-1, x.shape[-1]))[alpha].reshape(shape)
        return g

    def check(self, points, tol: float = 1e-12, invariance_tol: float = 1e-9) -> Report:
        pts = np.atleast_2d(points)
        try:
            g = self(pts)
        except CoverGapError as e:
            return Report("partition_of_unity", False, {"reason": "cover gap"}, witnesses=[{"x": e.witness}])
        sum_defect = float(np.max(np.abs(g.sum(axis=0) - 1.0)))
        inv = max(float(np.max(np.abs(self(phi(pts)) - g))) for phi in self.chart.elements)
        bounded = bool(np.all((g >= 0) & (g <= 1 + 1e-15)))
        ok = sum_defect <= tol and inv <= invariance_tol and bounded
        return Report(
            "partition_of_unity", ok,
            {"nodes": len(pts), "sum_defect": sum_defect, "invariance_defect": inv, "bounded": bounded},
            tolerance=tol,
        )


def build_partition_of_unity(chart: Chart, cover, support=None) -> PartitionOfUnity:
    """Partition subordinate to ``cover``; ``support`` samples are checked for gaps."""
    pou = PartitionOfUnity(chart, cover)
    if support is not None:
        pou(support)
    return pou


def _as_partition(s: BranchingStructure, cover) -> PartitionOfUnity | None:
    if cover is None or isinstance(cover, PartitionOfUnity):
        return cover
    return build_partition_of_unity(s.chart, cover, s.support_samples())


def _glued(s, omega, pou, single, region, order, density, threads) -> MeasureResult:
    if pou is None:
        return single(omega)
    parts = [single(omega.scaled(pou.function(a))) for a in range(len(pou.cover))]
    contributions = tuple(c for p in parts for c in p.contributions)
    return MeasureResult(
        math.fsum(contributions),
        contributions,
        tuple(f for p in parts for f in p.prefactors),
        tuple(v for p in parts for v in p.integrals),
        math.fsum(p.error_estimate for p in parts),
        parts[0].effective_order,
    )


def global_measure(
    s: BranchingStructure,
    omega: DifferentialForm,
    cover=None,
    region: Region | None = None,
    order: int = DEFAULT_ORDER,
    density=None,
    threads: int = 1,
) -> MeasureResult:
    """Σ_α μ(g_α ω) over a partition of unity; a missing cover means one set."""
    pou = _as_partition(s, cover)
    return _glued(s, omega, pou,
                  lambda w: chart_measure(s, w, region, order, density, threads),
                  region, order, density, threads)


def global_boundary_measure(
    s: BranchingStructure,
    tau: DifferentialForm,
    cover=None,
    region: Region | None = None,
    order: int = DEFAULT_ORDER,
    density=None,
    threads: int = 1,
) -> MeasureResult:
    pou = _as_partition(s, cover)
    return _glued(s, tau, pou,
                  lambda w: boundary_measure(s, w, region, order, density, threads),
                  region, order, density, threads)


@dataclass
class StokesResult:
    interior: MeasureResult
    boundary: MeasureResult

    @property
    def residual(self) -> float:
        return self.interior.value - self.boundary.value


def stokes(s: BranchingStructure, omega: DifferentialForm, cover=None,
           order: int = DEFAULT_ORDER, threads: int = 1) -> StokesResult:
    if omega.degree != s.n - 1:
        raise ValueError("Stokes needs a form of degree n-1")
    return StokesResult(
        global_measure(s, exterior_derivative(omega), cover, order=order, threads=threads),
        global_boundary_measure(s, omega, cover, order=order, threads=threads),
    )


def stokes_residual(s: BranchingStructure, omega: DifferentialForm, cover=None,
                    order: int = DEFAULT_ORDER, threads: int = 1) -> float:
    """μ_{dω}(S) − μ_ω(∂S)."""
    return stokes(s, omega, cover, order, threads).residual


# ---------------------------------------------------------------------------
# comparison verifiers


def verify_independence(
    s1: BranchingStructure,
    s2: BranchingStructure,
    omega: DifferentialForm,
    region: Region | None = None,
    tol: float = 1e-9,
    order: int = DEFAULT_ORDER,
) -> Report:
    """Two presentations of the same Θ give the same measure."""
    if region is not None and region.cells is not None:
        raise ValueError("cell regions are tied to one structure; use a predicate region")
    try:
        samples = compare_theta(s1, s2)
    except ThetaMismatchError as e:
        return Report("verify_independence", False,
                      {"reason": "theta mismatch"},
                      witnesses=[{"x": e.witness, "theta1": e.theta1, "theta2": e.theta2}])
    m1 = chart_measure(s1, omega, region, order)
    m2 = chart_measure(s2, omega, region, order)
    diff = abs(m1.value - m2.value)
    return Report(
        "verify_independence", diff <= tol,
        {"measure1": m1.value, "measure2": m2.value, "difference": diff, "theta_samples": samples},
        {"s1": m1.prefactors, "s2": m2.prefactors},
        tolerance=tol,
    )


def verify_restriction(
    s: BranchingStructure,
    x,
    V: Box | Ball,
    omega: DifferentialForm,
    tol: float = 1e-9,
    order: int = DEFAULT_ORDER,
    samples: int = 256,
) -> Report:
    """Restricting to an H-invariant neighbourhood V of x, H the stabiliser of x."""
    chart = s.chart
    H = chart.stabilizer(x)
    pts = V.sample(samples, offset=29)
    witnesses = []
    for h in H:
        inside = V.contains(chart.elements[h](pts), tol=1e-9)
        if not inside.all():
            k = int(np.argmin(inside))
            witnesses.append({"kind": "not-invariant", "element": chart.names[h], "y": pts[k]})
    for g in range(chart.order):
        if g in H:
            continue
        hit = V.contains(chart.elements[g](pts), tol=0.0)
        if hit.any():
            k = int(np.argmax(hit))
            witnesses.append({"kind": "overlap", "element": chart.names[g], "y": pts[k],
                              "image": chart.elements[g](pts[k])})
    if witnesses:
        return Report("verify_restriction", False, {"reason": "V is not a valid restriction",
                                                    "stabilizer": [chart.names[h] for h in H]},
                      witnesses=witnesses[:4])
    cosets = chart.cosets(H)
    ge = chart.effective.order
    h0 = chart.ineffective_on(H, pts)
    ge_local = len(H) // len(h0)
    lhs = Fraction(1, ge) * len(cosets)
    rhs = Fraction(1, ge_local)
    local = BranchingStructure(chart.subgroup(H, V), s.branches, s.weights, s.tol)
    mu_v = chart_measure(local, omega, Region.inside(V), order)

    def saturated(y):
        return np.any([V.contains(phi(y)) for phi in chart.elements], axis=0)

    mu_u = chart_measure(s, omega, Region.from_predicate(saturated), order)
    diff = abs(mu_v.value - mu_u.value)
    ok = lhs == rhs and diff <= tol
    return Report(
        "verify_restriction", ok,
        {"measure_V": mu_v.value, "measure_U": mu_u.value, "difference": diff,
         "stabilizer": [chart.names[h] for h in H], "cosets": len(cosets),
         "rational_identity": lhs == rhs},
        {"1/#G_e*|R|": lhs, "1/#G~_e": rhs},
        tolerance=tol,
    )


def verify_morphism_invariance(
    s: BranchingStructure,
    phi: SmoothMap,
    omega: DifferentialForm,
    phi_inverse: SmoothMap | None = None,
    tol: float = 1e-9,
    order: int = DEFAULT_ORDER,
) -> Report:
    """Measures of a structure and of its image under an ω-preserving map agree."""
    chart = s.chart
    pts = s.support_samples(128)
    gen = sampling.rng(31)
    vecs = [gen.standard_normal(pts.shape) for _ in range(omega.degree)]
    defect = float(np.max(invariance_defect(omega, phi, pts, vecs)))
    if defect > tol:
        return Report("verify_morphism_invariance", False,
                      {"reason": "form is not invariant under the map", "invariance_defect": defect},
                      tolerance=tol, witnesses=[{"defect": defect}])
    if chart.order > 1 and phi_inverse is None:
        raise ValueError("a nontrivial group needs the inverse map to transport the action")
    img = phi(chart.domain.sample(256, offset=3))
    center = img.mean(axis=0)
    domain = Ball(tuple(center), float(np.max(np.linalg.norm(img - center, axis=1))) * 1.01 + 1e-12)
    if chart.order > 1:
        elements = [phi.compose(g.compose(phi_inverse)) for g in chart.elements]
        moved = Chart(domain, elements, chart.table, chart.identity, chart.names, check=False)
    else:
        moved = Chart(domain)
    image = BranchingStructure(moved, [b.pushed(phi) for b in s.branches], s.weights, s.tol)
    m1 = chart_measure(s, omega, order=order)
    m2 = chart_measure(image, omega, order=order)
    diff = abs(m1.value - m2.value)
    return Report(
        "verify_morphism_invariance", diff <= tol,
        {"measure": m1.value, "pushed_measure": m2.value, "difference": diff,
         "invariance_defect": defect},
        {"source": m1.prefactors, "target": m2.prefactors},
        tolerance=tol,
    )
