import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from branchform.branched import (
    BranchingStructure,
    ThetaMismatchError,
    Tolerances,
    bad_set_density,
    classify_point,
    compare_theta,
    halved_union,
    tangent_branches,
    theta,
)
from branchform.expr import SmoothMap
from branchform.geometry import Box, Branch, Chart, ParamDomain

from conftest import circle_branch

SQUARE = Box((-2, -2), (2, 2))
LINE = ParamDomain(intervals=((-1.0, 1.0),))


def curve(texts, domain=LINE, resolution=8, name=""):
    return Branch(SmoothMap.from_strings(texts, 1), domain, 1, resolution, name)


@pytest.fixture
def chart():
    return Chart(SQUARE)


@pytest.fixture
def tangency(chart):
    return BranchingStructure(chart, [curve(["x0", "0"]), curve(["x0", "x0^3"])], ["1/3", "2/3"])


@pytest.fixture
def crossing(chart):
    return BranchingStructure(chart, [curve(["x0", "x0"]), curve(["x0", "-x0"])], [1, 1])


def test_tolerance_defaults_scale_with_chart(chart):
    tol = Tolerances.for_chart(chart)
    assert tol.eps_mem == pytest.approx(1e-7 * math.hypot(4, 4))
    assert tol.eps_coincide == 10 * tol.eps_mem
    assert tol.theta_tol == 1e-5


@pytest.mark.parametrize(
    "branches, weights, message",
    [
        ([], [], "at least one branch"),
        (["line"], [1, 2], "one weight per branch"),
        (["line"], [0], "positive"),
        (["line"], ["-1/2"], "positive"),
    ],
)
def test_structure_validation(chart, branches, weights, message):
    bs = [curve(["x0", "0"]) for _ in branches]
    with pytest.raises(ValueError, match=message):
        BranchingStructure(chart, bs, weights)


def test_mixed_dimensions_rejected(chart):
    square = Branch(SmoothMap.identity(2), ParamDomain(corners=(1.0, 1.0)))
    with pytest.raises(ValueError, match="same dimension"):
        BranchingStructure(chart, [curve(["x0", "0"]), square], [1, 1])


def test_theta_sums_incident_weights(tangency):
    assert theta(tangency, [0.5, 0.0]) == Fraction(1, 3)
    assert theta(tangency, [0.5, 0.125]) == Fraction(2, 3)
    assert theta(tangency, [0.0, 0.0]) == Fraction(1)
    assert theta(tangency, [0.5, 0.5]) == 0


def test_theta_is_exact_rational(tangency):
    values = tangency.theta_many(np.array([[0.0, 0.0], [-0.9, 0.0]]))
    assert all(isinstance(v, Fraction) for v in values)


# -- classification ------------------------------------------------------------


def test_single_incident_branch_is_good(tangency):
    c = classify_point(tangency, [0.5, 0.0], 0.1)
    assert c.good and c.incidence == (0,)


def test_tangent_curves_are_bad_at_the_origin(tangency):
    c = classify_point(tangency, [0.0, 0.0], 0.1)
    assert c.classification == "Bad"
    assert c.partition == ((0,), (1,))


def test_duplicate_branch_is_good(chart):
    s = BranchingStructure(chart, [circle_branch(8), circle_branch(12)], ["1/2", "1/2"])
    c = classify_point(s, [0.0, 1.0], 0.2)
    assert c.good and c.partition == ((0, 1),)


def test_classification_independent_of_enumeration(chart):
    a, b = curve(["x0", "x0^3"]), curve(["x0", "0"])
    forward = BranchingStructure(chart, [a, b], [1, 1])
    backward = BranchingStructure(chart, [b, a], [1, 1])
    for x in ([0.0, 0.0], [0.5, 0.0], [0.5, 0.125]):
        f, g = classify_point(forward, x, 0.1), classify_point(backward, x, 0.1)
        assert f.good == g.good and len(f.partition) == len(g.partition)


def test_point_off_the_support(tangency):
    with pytest.raises(ValueError, match="not on the support"):
        classify_point(tangency, [0.5, 0.5], 0.1)


def test_classification_constant_inside_a_coincidence_cell(chart):
    s = BranchingStructure(chart, [circle_branch(8), circle_branch(16)], [1, 1])
    t = np.linspace(0.1, 0.6, 6)
    classes = {(c.incidence, c.partition) for c in
               (classify_point(s, [math.cos(v), math.sin(v)], 0.1) for v in t)}
    assert classes == {((0, 1), ((0, 1),))}


# -- tangent spaces ------------------------------------------------------------


def test_tangent_of_a_line(chart):
    s = BranchingStructure(chart, [curve(["x0", "2*x0"])], [1])
    (T,) = tangent_branches(s, [0.2, 0.4])
    assert np.max(subspace_angles(T, np.array([[1.0], [2.0]]))) <= 1e-12


def test_tangent_curves_share_the_x_axis(tangency):
    spaces = tangent_branches(tangency, [0.0, 0.0])
    assert len(spaces) == 2
    for T in spaces:
        assert np.max(subspace_angles(T, np.array([[1.0], [0.0]]))) <= 1e-12


def test_transverse_lines_give_two_subspaces(crossing):
    spaces = tangent_branches(crossing, [0.0, 0.0])
    assert len(spaces) == 2
    assert np.max(subspace_angles(spaces[0], spaces[1])) == pytest.approx(math.pi / 2)


# -- bad set density -----------------------------------------------------------


def test_bad_fraction_halves_for_tangent_curves(tangency):
    f = [bad_set_density(tangency, r) for r in (8, 16, 32)]
    assert all(0.4 <= b / a <= 0.6 for a, b in zip(f, f[1:]))


def test_single_branch_has_no_bad_points(chart):
    s = BranchingStructure(chart, [circle_branch()], [1])
    assert [bad_set_density(s, r) for r in (8, 16)] == [0.0, 0.0]


def test_transverse_crossing_is_bad_with_vanishing_fraction(crossing):
    assert not classify_point(crossing, [0.0, 0.0], 0.1).good
    f = [bad_set_density(crossing, r) for r in (8, 16, 32)]
    assert f[0] > f[1] > f[2] > 0
    assert f[2] == pytest.approx(2 / (2 * 33))


# -- union and comparison -------------------------------------------------------


def test_halved_union_of_identical_structures(chart):
    s = BranchingStructure(chart, [circle_branch()], [1])
    u = halved_union(s, s)
    assert u.weights == (Fraction(1, 2), Fraction(1, 2))
    assert u.theta([1.0, 0.0]) == 1


def test_halved_union_with_a_split_presentation(chart):
    whole = BranchingStructure(chart, [curve(["x0", "0"])], [1])
    halves = BranchingStructure(chart, [
        curve(["x0", "0"], ParamDomain(intervals=((-1.0, 0.0),))),
        curve(["x0", "0"], ParamDomain(intervals=((0.0, 1.0),))),
    ], [1, 1])
    u = halved_union(whole, halves)
    assert [u.theta([x, 0.0]) for x in (-0.7, -0.2, 0.3, 0.9)] == [1, 1, 1, 1]


def test_mismatched_supports_raise_with_witness(chart):
    a = BranchingStructure(chart, [curve(["x0", "0"])], [1])
    b = BranchingStructure(chart, [curve(["x0", "x0^2"])], [1])
    with pytest.raises(ThetaMismatchError) as info:
        compare_theta(a, b)
    assert info.value.witness.shape == (2,)
    assert {info.value.theta1, info.value.theta2} == {0, 1}


# -- structure-level invariants --------------------------------------------------


def test_invariants_of_a_symmetric_structure():
    c4 = Chart.from_matrices(SQUARE, [np.linalg.matrix_power([[0, -1], [1, 0]], k) for k in range(4)])
    s = BranchingStructure(c4, [circle_branch(16)], [1])
    assert all(s.check_invariants())


def test_theta_functoriality_detects_broken_symmetry():
    mirror = Chart.from_matrices(SQUARE, [np.eye(2), [[1, 0], [0, -1]]])
    s = BranchingStructure(mirror, [curve(["x0", "1/2 + 0*x0"])], [1])
    rep = s.check_theta_functoriality(64)
    assert not rep and rep.witnesses


def test_orientation_reversing_action_is_reported():
    mirror = Chart.from_matrices(SQUARE, [np.eye(2), [[1, 0], [0, -1]]])
    s = BranchingStructure(mirror, [circle_branch(16)], [1])
    assert s.check_group_invariance()
    assert not s.check_orientation()
