"""Measures of differential forms on branched submanifolds of finite-group charts."""

from .branched import (
    BranchingStructure,
    PointClass,
    ThetaMismatchError,
    Tolerances,
    bad_set_density,
    classify_point,
    compare_theta,
    halved_union,
    tangent_branches,
    theta,
)
from .expr import DomainError, Dual, ExprSyntaxError, SmoothMap, parse_expression
from .forms import (
    DifferentialForm,
    VectorField,
    bracket_naturality_check,
    eval_form,
    exterior_derivative,
    lie_bracket,
    poincare_primitive,
    pullback,
)
from .geometry import Ball, Box, Branch, Chart, ParamDomain, branch_from_graph
from .measure import (
    Region,
    boundary_measure,
    build_partition_of_unity,
    chart_measure,
    global_boundary_measure,
    global_measure,
    stokes,
    verify_independence,
    verify_morphism_invariance,
    verify_restriction,
)
from .multisection import (
    Multisection,
    NotInGoodPosition,
    PropernessError,
    ToySection,
    homotopy_invariance_check,
    invariant_psi,
    solve,
)
from .report import Report
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = [
    "Ball", "Box", "Branch", "BranchingStructure", "Chart", "DifferentialForm", "DomainError",
    "Dual", "ExprSyntaxError", "Multisection", "NotInGoodPosition", "ParamDomain", "PointClass",
    "PropernessError", "Region", "Report", "Scenario", "ScenarioError", "SmoothMap",
    "ThetaMismatchError", "Tolerances", "ToySection", "VectorField", "bad_set_density",
    "boundary_measure", "bracket_naturality_check", "branch_from_graph", "build_partition_of_unity",
    "chart_measure", "classify_point", "compare_theta", "eval_form", "exterior_derivative",
    "global_boundary_measure", "global_measure", "halved_union", "homotopy_invariance_check",
    "invariant_psi", "lie_bracket", "load_scenario", "parse_expression", "poincare_primitive",
    "pullback", "solve", "stokes", "tangent_branches", "theta", "verify_independence",
    "verify_morphism_invariance", "verify_restriction",
]
