"""Weighted branching structures in a chart.

A structure is a finite family of equal-dimensional branches with positive
rational weights.  Its weight function Θ sums the weights of the branches
through a point; set-theoretic conditions (membership, local coincidence of
branches, equality of tangent spaces) are decided numerically with the
tolerances in :class:`Tolerances`.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.linalg import subspace_angles

from .geometry import Branch, Chart, Mesh, check_group_invariance
from .report import Report


@dataclass(frozen=True)
class Tolerances:
    eps_mem: float
    eps_coincide: float
    theta_tol: float = 1e-5

    @classmethod
    def for_chart(cls, chart: Chart, eps_mem=None, eps_coincide=None, theta_tol=None):
        eps_mem = 1e-7 * chart.domain.diameter if eps_mem is None else eps_mem
        eps_coincide = 10 * eps_mem if eps_coincide is None else eps_coincide
        return cls(eps_mem, eps_coincide, 1e-5 if theta_tol is None else theta_tol)


class ThetaMismatchError(ValueError):
    """Two structures disagree on Θ at a sample point."""

    def __init__(self, witness, theta1: Fraction, theta2: Fraction):
        super().__init__(f"Θ differs at {np.asarray(witness).tolist()}: {theta1} vs {theta2}")
        self.witness = np.asarray(witness)
        self.theta1 = theta1
        self.theta2 = theta2


@dataclass(frozen=True)
class PointClass:
    good: bool
    incidence: tuple[int, ...]
    partition: tuple[tuple[int, ...], ...]

    @property
    def classification(self) -> str:
        return "Good" if self.good else "Bad"


def _orthonormal(frame: np.ndarray) -> np.ndarray:
    u, _, _ = np.linalg.svd(frame, full_matrices=False)
    return u


class BranchingStructure:
    """Branches (M_i) with weights (σ_i) presenting Θ(y) = Σ_{y ∈ M_i} σ_i."""

    def __init__(
        self,
        chart: Chart,
        branches: Sequence[Branch],
        weights: Sequence[Fraction | int | str],
        tolerances: Tolerances | None = None,
    ):
        if len(branches) != len(weights):
            raise ValueError("one weight per branch")
        if not branches:
            raise ValueError("a branching structure needs at least one branch")
        dims = {b.n for b in branches}
        if len(dims) != 1:
            raise ValueError("all branches must have the same dimension")
        weights = tuple(Fraction(w) for w in weights)
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive rationals")
        for b in branches:
            if b.ambient_dim != chart.dim:
                raise ValueError("branch does not live in the chart")
        self.chart = chart
        self.branches = tuple(branches)
        self.weights = weights
        self.tol = tolerances or Tolerances.for_chart(chart)

    @property
    def n(self) -> int:
        return self.branches[0].n

    def __len__(self) -> int:
        return len(self.branches)

    def with_branches(self, branches, weights=None, chart=None) -> "BranchingStructure":
        return BranchingStructure(
            chart or self.chart, branches, self.weights if weights is None else weights, self.tol
        )

    # -- incidence and Θ ---------------------------------------------------

    def incidence(self, points) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
        """Membership mask ``(P, B)``, per-branch preimages, distances ``(P, B)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist = np.empty((len(pts), len(self.branches)))
        pre = []
        for i, b in enumerate(self.branches):
            q, d = b.project(pts)
            pre.append(q)
            dist[:, i] = d
        return dist <= self.tol.eps_mem, pre, dist

    def theta_many(self, points) -> list[Fraction]:
        mask, _, _ = self.incidence(points)
        cache: dict[bytes, Fraction] = {}
        out = []
        for row in mask:
            key = row.tobytes()
            if key not in cache:
                cache[key] = sum((w for w, m in zip(self.weights, row) if m), Fraction(0))
            out.append(cache[key])
        return out

    def theta(self, x) -> Fraction:
        return self.theta_many(np.atleast_2d(x))[0]

    def support_samples(self, count: int | None = None, order: int = 2) -> np.ndarray:
        """Interior quadrature nodes of all branches (never on mesh seams)."""
        pts = np.vstack([b.points(b.nodes(order)[0]) for b in self.branches])
        if count is not None and count < len(pts):
            pick = np.linspace(0, len(pts) - 1, count).round().astype(int)
            pts = pts[pick]
        return pts

    # -- local structure at a point ---------------------------------------

    def _patch(self, i: int, q: np.ndarray, x: np.ndarray, radius: float, per_axis: int = 41):
        b = self.branches[i]
        J = b.frame(q)
        smin = np.linalg.svd(J, compute_uv=False)[-1]
        span = b.domain.upper - b.domain.lower
        rho = np.minimum(radius / max(smin, 1e-12), span)
        axis = np.linspace(-1.0, 1.0, per_axis)
        grid = np.stack(np.meshgrid(*([axis] * b.n), indexing="ij"), axis=-1).reshape(-1, b.n)
        qs = b.domain.wrap(q + grid * rho)
        pts = b.points(qs)
        keep = np.linalg.norm(pts - x, axis=1) <= radius
        return np.vstack([x[None, :], pts[keep]])

    def classify_point(self, x, radius: float) -> PointClass:
        x = np.asarray(x, dtype=float)
        mask, pre, _ = self.incidence(x[None, :])
        inc = tuple(int(i) for i in np.flatnonzero(mask[0]))
        if not inc:
            raise ValueError(f"point {x.tolist()} is not on the support")
        parent = {i: i for i in inc}

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        qs = {i: pre[i][0] for i in inc}
        patches = {i: self._patch(i, qs[i], x, radius) for i in inc}
        tangents = {i: _orthonormal(self.branches[i].frame(qs[i])) for i in inc}
        for a, i in enumerate(inc):
            for j in inc[a + 1 :]:
                if self._coincide(i, j, patches, tangents):
                    parent[find(j)] = find(i)
        classes: dict[int, list[int]] = {}
        for i in inc:
            classes.setdefault(find(i), []).append(i)
        partition = tuple(sorted(tuple(sorted(c)) for c in classes.values()))
        return PointClass(len(partition) == 1, inc, partition)

    def _coincide(self, i, j, patches, tangents) -> bool:
        if np.max(subspace_angles(tangents[i], tangents[j])) > self.tol.theta_tol:
            return False
        d_ij = np.max(self.branches[j].distance(patches[i]))
        if d_ij > self.tol.eps_coincide:
            return False
        d_ji = np.max(self.branches[i].distance(patches[j]))
        return bool(d_ji <= self.tol.eps_coincide)

    def tangent_branches(self, x, radius: float = 0.1) -> list[np.ndarray]:
        """Orthonormal tangent bases, one per coincidence class at ``x``."""
        x = np.asarray(x, dtype=float)
        cls = self.classify_point(x, radius)
        mask, pre, dist = self.incidence(x[None, :])
        out = []
        for members in cls.partition:
            i = members[0]
            if dist[0, i] > self.tol.eps_mem:
                raise ValueError("preimage not found")
            out.append(_orthonormal(self.branches[i].frame(pre[i][0])))
        return out

    # -- structural checks --------------------------------------------------

    def check_group_invariance(self) -> Report:
        return check_group_invariance(self.chart, self.branches)

    def check_theta_functoriality(self, samples: int = 256) -> Report:
        pts = self.support_samples(samples)
        base = self.theta_many(pts)
        witnesses = []
        for g, phi in enumerate(self.chart.elements):
            img = self.theta_many(phi(pts))
            for k, (a, b) in enumerate(zip(base, img)):
                if a != b:
                    witnesses.append({"element": self.chart.names[g], "x": pts[k],
                                      "theta_x": a, "theta_gx": b})
                    break
        return Report("theta_functoriality", not witnesses, {"samples": len(pts)},
                      witnesses=witnesses)

    def check_orientation(self, per_branch: int = 32) -> Report:
        """Every g carries oriented branches to oriented branches, preserving
        orientation, at matched sample points."""
        witnesses = []
        checked = 0
        for i, b in enumerate(self.branches):
            q = b.mesh.centers
            if len(q) > per_branch:
                q = q[np.linspace(0, len(q) - 1, per_branch).round().astype(int)]
            x = b.points(q)
            F = b.frame(q)
            for g, phi in enumerate(self.chart.elements):
                y = phi(x)
                T = np.einsum("pij,pjk->pik", phi.jacobian(x), F)
                mask, pre, _ = self.incidence(y)
                for p in range(len(y)):
                    Tb = _orthonormal(T[p])
                    matched = False
                    for j in np.flatnonzero(mask[p]):
                        Fj = self.branches[j].frame(pre[j][p])
                        if np.max(subspace_angles(Tb, _orthonormal(Fj))) > 1e3 * self.tol.theta_tol:
                            continue
                        matched = True
                        coords = np.linalg.lstsq(Fj, T[p], rcond=None)[0]
                        sign = np.sign(np.linalg.det(coords)) * b.orientation * self.branches[j].orientation
                        checked += 1
                        if sign <= 0:
                            witnesses.append({"element": self.chart.names[g], "branch": i,
                                              "target": int(j), "x": x[p]})
                    if not matched:
                        witnesses.append({"element": self.chart.names[g], "branch": i,
                                          "target": None, "x": x[p]})
                    if len(witnesses) > 8:
                        break
        return Report("orientation_compatibility", not witnesses, {"matched_samples": checked},
                      witnesses=witnesses[:8])

    def check_invariants(self) -> list[Report]:
        return [self.check_group_invariance(), self.check_theta_functoriality(),
                self.check_orientation()]


def theta(structure: BranchingStructure, x) -> Fraction:
    return structure.theta(x)


def classify_point(structure: BranchingStructure, x, radius: float) -> PointClass:
    return structure.classify_point(x, radius)


def tangent_branches(structure: BranchingStructure, x, radius: float = 0.1) -> list[np.ndarray]:
    return structure.tangent_branches(x, radius)


def bad_set_density(structure: BranchingStructure, resolution: int, radius: float = 0.1) -> float:
    """Fraction of mesh vertices (at ``resolution``) classified Bad."""
    verts = np.vstack([b.points(Mesh(b.domain, resolution).vertices()) for b in structure.branches])
    mask, _, _ = structure.incidence(verts)
    bad = 0
    for k in np.flatnonzero(mask.sum(axis=1) >= 2):
        if not structure.classify_point(verts[k], radius).good:
            bad += 1
    return bad / len(verts)


def halved_union(s1: BranchingStructure, s2: BranchingStructure) -> BranchingStructure:
    """Disjoint union with all weights halved; both must present the same Θ."""
    if s1.chart is not s2.chart and s1.chart.order != s2.chart.order:
        raise ValueError("structures live in different charts")
    if s1.n != s2.n:
        raise ValueError("structures of different dimension")
    compare_theta(s1, s2)
    weights = [w / 2 for w in s1.weights] + [w / 2 for w in s2.weights]
    return BranchingStructure(s1.chart, s1.branches + s2.branches, weights, s1.tol)


def compare_theta(s1: BranchingStructure, s2: BranchingStructure) -> int:
    """Raise :class:`ThetaMismatchError` at the first disagreeing sample."""
    pts = np.vstack([s1.support_samples(), s2.support_samples()])
    t1 = s1.theta_many(pts)
    t2 = s2.theta_many(pts)
    for k, (a, b) in enumerate(zip(t1, t2)):
        if a != b:
            raise ThetaMismatchError(pts[k], a, b)
    return len(pts)
