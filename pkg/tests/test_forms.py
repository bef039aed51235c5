import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchform.expr import DomainError, SmoothMap, directional
from branchform.forms import (
    DifferentialForm,
    VectorField,
    bracket_naturality_check,
    check_form_invariance,
    eval_form,
    exterior_derivative,
    lie_bracket,
    parse_multi_index,
    poincare_primitive,
    pullback,
    vector_field_formula,
)
from branchform.geometry import Ball, Box, Chart


def field(texts):
    m = SmoothMap.from_strings(texts, len(texts))
    return VectorField(m._components, m.arity, exprs=m.exprs)


def max_difference(a, b, pts):
    basis = np.eye(a.dim)
    return max(
        (float(np.max(np.abs(a(pts, *[basis[i] for i in I]) - b(pts, *[basis[i] for i in I]))))
         for I in itertools.combinations(range(a.dim), a.degree)),
        default=0.0,
    )


@pytest.fixture
def pts():
    return np.random.default_rng(7).uniform(-1, 1, size=(20, 3))


# -- evaluation ----------------------------------------------------------------


def test_area_form_alternates():
    area = DifferentialForm(2, 2, {"01": "1"})
    e1, e2 = np.eye(2)
    assert eval_form(area, [0.3, 0.1], e1, e2) == 1.0
    assert eval_form(area, [0.3, 0.1], e2, e1) == -1.0


def test_coefficient_read_off():
    assert eval_form(DifferentialForm(2, 1, {"1": "x0"}), [3.0, 0.0], [0.0, 1.0]) == 3.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_repeated_argument_vanishes(values):
    omega = DifferentialForm(3, 2, {"01": "x2 + 1", "02": "sin(x0)", "12": "x0*x1"})
    x, v = np.array(values[:3]), np.array(values[3:])
    assert eval_form(omega, x, v, v) == pytest.approx(0.0, abs=1e-12)


def test_multilinear_in_each_slot(pts):
    omega = DifferentialForm(3, 2, {"01": "x2^2", "12": "exp(x0)"})
    rng = np.random.default_rng(0)
    u, v, w = rng.normal(size=(3, 3))
    a, b = 1.7, -0.4
    lhs = omega(pts, a * u + b * w, v)
    rhs = a * omega(pts, u, v) + b * omega(pts, w, v)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


@pytest.mark.parametrize(
    "terms, message",
    [({"10": "1"}, "strictly increasing"), ({"0": "1"}, "strictly increasing"), ({"03": "1"}, "in range")],
)
def test_form_validation(terms, message):
    with pytest.raises(ValueError, match=message):
        DifferentialForm(3, 2, terms)


def test_wrong_vector_count():
    with pytest.raises(ValueError, match="takes 2 vectors"):
        DifferentialForm(2, 2, {"01": "1"})([0.0, 0.0], [1.0, 0.0])


def test_multi_index_spellings():
    assert parse_multi_index("01") == parse_multi_index("0,1") == parse_multi_index((0, 1)) == (0, 1)


# -- pullback ------------------------------------------------------------------


def test_pullback_by_identity(pts):
    omega = DifferentialForm(3, 2, {"01": "x2", "02": "x0*x1", "12": "cos(x1)"})
    assert max_difference(pullback(omega, SmoothMap.identity(3)), omega, pts) == 0.0


def test_pullback_of_arc_form_to_circle():
    arc = DifferentialForm(2, 1, {"0": "-x1", "1": "x0"})
    pulled = pullback(arc, SmoothMap.from_strings(["cos(x0)", "sin(x0)"], 1))
    theta = np.linspace(0, 2 * math.pi, 13)[:, None]
    assert np.allclose(pulled(theta, [1.0]), 1.0, atol=1e-15)


def test_pullback_by_constant_map_vanishes(pts):
    omega = DifferentialForm(2, 1, {"0": "x1", "1": "1"})
    pulled = pullback(omega, SmoothMap.from_strings(["1/2", "-2"], 3))
    assert max_difference(pulled, DifferentialForm.zero(3, 1), pts) == 0.0


def test_pullback_functoriality(pts):
    omega = DifferentialForm(2, 2, {"01": "exp(x0)*x1^2"})
    inner = SmoothMap.from_strings(["x0 + x1*x2", "sin(x1)", "x2^2 - x0"], 3)
    outer = SmoothMap.from_strings(["x0*x2", "x1 + cos(x0)"], 3)
    direct = pullback(omega, outer.compose(inner))
    stepwise = pullback(pullback(omega, outer), inner)
    assert max_difference(direct, stepwise, pts) <= 1e-10


def test_pullback_dimension_errors():
    with pytest.raises(ValueError):
        pullback(DifferentialForm(2, 1, {"0": "1"}), SmoothMap.identity(3))
    with pytest.raises(ValueError):
        pullback(DifferentialForm(2, 2, {"01": "1"}), SmoothMap.from_strings(["x0", "0"], 1))


# -- exterior derivative ---------------------------------------------------------


def test_d_of_x0_dx1():
    d = exterior_derivative(DifferentialForm(2, 1, {"1": "x0"}))
    assert max_difference(d, DifferentialForm(2, 2, {"01": "1"}), np.random.default_rng(1).normal(size=(5, 2))) == 0.0


BATTERY = [
    DifferentialForm(3, 0, {(): "sin(x0*x1) + x2^3"}),
    DifferentialForm(3, 1, {"0": "x1*x2", "1": "exp(x0)", "2": "x0^2*cos(x1)"}),
    DifferentialForm(3, 2, {"01": "x2^2*x0", "02": "sin(x1)", "12": "x0*x1*x2"}),
    DifferentialForm(3, 1, {"1": "sqrt(4 + x0^2)/(2 + x2^2)"}),
]


@pytest.mark.parametrize("omega", [w for w in BATTERY if w.degree <= w.dim - 2],
                         ids=lambda w: f"degree{w.degree}")
def test_d_squared_is_zero(omega, pts):
    dd = exterior_derivative(exterior_derivative(omega))
    rng = np.random.default_rng(2)
    vecs = rng.normal(size=(dd.degree, *pts.shape))
    assert np.max(np.abs(dd(pts, *vecs))) <= 1e-10


def test_d_of_f_dg_is_df_wedge_dg(pts):
    f = SmoothMap.from_strings(["x0*sin(x2)"], 3)
    g = SmoothMap.from_strings(["exp(x1) + x0*x2"], 3)
    omega = DifferentialForm(3, 1, {(i,): (lambda xs, i=i: f.apply(xs)[0] * _partial(g, xs, i)) for i in range(3)})
    d = exterior_derivative(omega)
    rng = np.random.default_rng(3)
    u, v = rng.normal(size=(2, *pts.shape))
    df, dg = f.jacobian(pts)[:, 0, :], g.jacobian(pts)[:, 0, :]
    wedge = np.sum(df * u, 1) * np.sum(dg * v, 1) - np.sum(df * v, 1) * np.sum(dg * u, 1)
    assert np.max(np.abs(d(pts, u, v) - wedge)) <= 1e-12


def _partial(m, xs, i):
    return directional(lambda ys: m.apply(ys), xs, [1.0 if k == i else 0.0 for k in range(len(xs))])[0]


@pytest.mark.parametrize("omega", BATTERY[:3], ids=lambda w: f"degree{w.degree}")
def test_d_matches_vector_field_formula(omega, pts):
    constant = [field(["1", "2", "-1"]), field(["0", "1", "1/2"]), field(["3", "0", "1"])]
    curved = [field(["x1", "x0*x2", "1"]), field(["sin(x2)", "1", "x0"]), field(["x1^2", "x2", "x0 - 1"])]
    d = exterior_derivative(omega)
    for fields in (constant, curved):
        chosen = fields[: omega.degree + 1]
        coordinate = d(pts, *[F(pts) for F in chosen])
        assert np.max(np.abs(vector_field_formula(omega, chosen, pts) - coordinate)) <= 1e-10


def test_derivative_of_top_degree_form_is_an_error():
    with pytest.raises(ValueError):
        exterior_derivative(DifferentialForm(2, 2, {"01": "1"}))


# -- brackets --------------------------------------------------------------------


def test_constant_fields_commute(pts):
    assert np.max(np.abs(lie_bracket(field(["1", "2", "3"]), field(["0", "-1", "5"]))(pts))) == 0.0


def test_bracket_antisymmetry(pts):
    A, B = field(["x1*x2", "sin(x0)", "x2"]), field(["exp(x2)", "x0^2", "x1"])
    assert np.array_equal(lie_bracket(A, B)(pts), -lie_bracket(B, A)(pts))


def test_bracket_of_linear_fields():
    M, K = np.array([[0.0, 1.0], [2.0, -1.0]]), np.array([[3.0, 0.0], [1.0, 1.0]])
    A = field([f"{M[i, 0]}*x0 + {M[i, 1]}*x1" for i in range(2)])
    B = field([f"{K[i, 0]}*x0 + {K[i, 1]}*x1" for i in range(2)])
    x = np.random.default_rng(4).normal(size=(10, 2))
    assert np.max(np.abs(lie_bracket(A, B)(x) - x @ (M @ K - K @ M).T)) <= 1e-12


def test_naturality_report_cases():
    x = np.random.default_rng(5).normal(size=(10, 2))
    A, B = field(["x0", "x1"]), field(["-x1", "x0"])
    rotation = SmoothMap.linear([[0.0, -1.0], [1.0, 0.0]])
    assert bracket_naturality_check(rotation, A, B, x)
    assert bracket_naturality_check(SmoothMap.identity(2), field(["x1^2", "x0"]), B, x).values["max_defect"] == 0.0
    rep = bracket_naturality_check(SmoothMap.linear([[2.0, 0.0], [0.0, 1.0]]), field(["x1", "0"]), B, x)
    assert not rep and rep.values["precondition"] == "fields are not φ-related"


# -- primitives --------------------------------------------------------------------


def test_primitive_of_dx0_is_y0():
    tau = poincare_primitive(DifferentialForm(2, 1, {"0": "1"}))
    y = np.random.default_rng(6).uniform(-1, 1, size=(10, 2))
    assert np.allclose(tau(y), y[:, 0], atol=1e-15)


def test_primitive_of_area_is_half_contraction():
    area = DifferentialForm(2, 2, {"01": "1"})
    tau = poincare_primitive(area)
    rng = np.random.default_rng(7)
    y, v = rng.uniform(-1, 1, size=(2, 30, 2))
    assert np.max(np.abs(tau(y, v) - 0.5 * area(y, y, v))) <= 1e-14
    assert max_difference(exterior_derivative(tau), area, y) <= 1e-10


def test_primitive_of_closed_transcendental_form():
    # d(exp(x0) sin(x1) + x2 x0) is closed
    omega = DifferentialForm(3, 1, {"0": "exp(x0)*sin(x1) + x2", "1": "exp(x0)*cos(x1)", "2": "x0"})
    assert max_difference(exterior_derivative(omega), DifferentialForm.zero(3, 2),
                          np.random.default_rng(8).normal(size=(10, 3))) <= 1e-10
    y = np.random.default_rng(9).uniform(-1, 1, size=(50, 3))
    tau = poincare_primitive(omega)
    assert np.max(np.abs(tau(y) - (np.exp(y[:, 0]) * np.sin(y[:, 1]) + y[:, 2] * y[:, 0]))) <= 1e-12
    assert max_difference(exterior_derivative(tau), omega, y) <= 1e-9


def test_primitive_domain_contract():
    omega = DifferentialForm(2, 1, {"0": "1"})
    with pytest.raises(ValueError, match="contain the origin"):
        poincare_primitive(omega, Ball((3.0, 3.0), 1.0))
    tau = poincare_primitive(omega, Ball((0.0, 0.0), 1.0))
    with pytest.raises(DomainError):
        tau([[2.0, 0.0]])
    with pytest.raises(ValueError):
        poincare_primitive(DifferentialForm(2, 0, {(): "1"}))


# -- invariance under the group ------------------------------------------------------


def test_form_invariance_examples():
    box = Box((-1, -1), (1, 1))
    quarter = Chart.from_matrices(box, [np.linalg.matrix_power([[0, -1], [1, 0]], k) for k in range(4)])
    assert check_form_invariance(DifferentialForm(2, 2, {"01": "1"}), quarter, tol=1e-10)
    mirror = Chart.from_matrices(box, [np.eye(2), [[-1, 0], [0, 1]]])
    rep = check_form_invariance(DifferentialForm(2, 1, {"1": "x0"}), mirror)
    w = rep.witnesses[0]
    assert not rep and w["defect"] == pytest.approx(2 * abs(w["x"][0] * w["vectors"][0][1]))
    assert check_form_invariance(DifferentialForm(2, 1, {"1": "x0"}), Chart(box)).values["max_defect"] == 0.0
