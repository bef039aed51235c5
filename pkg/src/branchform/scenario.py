"""Scenario files: TOML documents describing a chart, structures, forms,
covers and multisections.

Numbers may be written as TOML numbers or as strings ``"p/q"``, ``"0.25"``,
``"pi"``, ``"2*pi"`` or ``"1/2*pi"``.  Weights must be strings or integers
so that they stay exact.  Errors name the offending field path.

Layout (all tables except ``chart`` optional)::

    [chart]       dim, box = [[lo...], [hi...]] | ball = {center, radius},
                  elements = [[expr...], ...], table = [[...]], names = [...]
    [tolerances]  eps_mem, eps_coincide, theta_tol
    [[branches]]  name, map, corners, intervals, periodic, orientation,
                  weight, resolution, structure (default "main")
    [forms.NAME]  dim (defaults to chart dim), degree, terms = {"01" = expr}
    [covers]      NAME = [{ball = ...} | {box = ...}, ...]
    [maps.NAME]   map = [expr...], arity (defaults to chart dim)
    [multisection]  section, box, corners, resolution, homotopy,
                    sections = [{map, weight}, ...]
    [commands.CMD]  defaults for one CLI command
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from .branched import BranchingStructure, Tolerances
from .expr import SmoothMap
from .forms import DifferentialForm
from .geometry import Ball, Box, Branch, Chart, ParamDomain
from .multisection import Multisection, ToySection

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_PI = re.compile(r"^\s*(?:(?P<coef>[0-9./]+)\s*\*\s*)?pi\s*$")


def number(value, path: str) -> float:
    if isinstance(value, bool):
        raise ScenarioError(path, "expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI.match(value)
        try:
            if m:
                coef = Fraction(m.group("coef")) if m.group("coef") else Fraction(1)
                return float(coef) * math.pi
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ScenarioError(path, f"cannot read {value!r} as a number")


def rational(value, path: str) -> Fraction:
    if isinstance(value, bool) or isinstance(value, float):
        raise ScenarioError(path, "rationals must be integers or \"p/q\" strings")
    try:
        return Fraction(value)
    except (ValueError, TypeError, ZeroDivisionError):
        raise ScenarioError(path, f"cannot read {value!r} as a rational") from None


def _vector(value, path: str) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ScenarioError(path, "expected a list of numbers")
    return tuple(number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ScenarioError(f"{path}.{key}", "missing required field")
    return table[key]


def _expressions(value, arity: int, path: str) -> SmoothMap:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ScenarioError(path, "expected a list of expression strings")
    try:
        return SmoothMap.from_strings(value, arity)
    except ValueError as e:
        raise ScenarioError(path, str(e)) from None


def domain_from(table: dict, path: str) -> Box | Ball:
    if not isinstance(table, dict):
        raise ScenarioError(path, "expected a table with 'box' or 'ball'")
    try:
        if "box" in table:
            lo, hi = table["box"]
            return Box(_vector(lo, f"{path}.box[0]"), _vector(hi, f"{path}.box[1]"))
        if "ball" in table:
            ball = table["ball"]
            return Ball(_vector(_require(ball, "center", f"{path}.ball"), f"{path}.ball.center"),
                        number(_require(ball, "radius", f"{path}.ball"), f"{path}.ball.radius"))
    except (TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(path, str(e)) from None
    raise ScenarioError(path, "expected 'box' or 'ball'")


@dataclass
class Scenario:
    name: str
    path: Path | None
    chart: Chart
    tolerances: Tolerances
    branch_specs: list[dict] = field(default_factory=list)
    branches: dict[str, list[tuple[Branch, Fraction]]] = field(default_factory=dict)
    forms: dict[str, DifferentialForm] = field(default_factory=dict)
    covers: dict[str, list[Box | Ball]] = field(default_factory=dict)
    maps: dict[str, SmoothMap] = field(default_factory=dict)
    multisection: dict[str, Any] | None = None
    commands: dict[str, dict] = field(default_factory=dict)

    def structure(self, name: str = "main", refine: int = 1) -> BranchingStructure:
        if name not in self.branches:
            raise ScenarioError(f"structure {name!r}", "no branches belong to this structure")
        pairs = self.branches[name]
        return BranchingStructure(
            self.chart,
            [b.refined(b.resolution * refine) for b, _ in pairs],
            [w for _, w in pairs],
            self.tolerances,
        )

    def form(self, name: str) -> DifferentialForm:
        if name not in self.forms:
            raise ScenarioError(f"forms.{name}", "unknown form")
        return self.forms[name]

    def cover(self, name: str | None):
        if name is None:
            return None
        if name not in self.covers:
            raise ScenarioError(f"covers.{name}", "unknown cover")
        return self.covers[name]

    def map(self, name: str) -> SmoothMap:
        if name not in self.maps:
            raise ScenarioError(f"maps.{name}", "unknown map")
        return self.maps[name]

    def section(self, refine: int = 1):
        """(ToySection, Multisection, resolution) from the multisection table."""
        if self.multisection is None:
            raise ScenarioError("multisection", "scenario has no multisection table")
        ms = self.multisection
        return ms["section"], ms["multi"], ms["resolution"] * refine


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(str(path), f"cannot read file ({e.strerror})") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(str(path), f"syntax error: {e}") from None
    return scenario_from_dict(data, path)


def scenario_from_dict(data: dict, path: Path | None = None) -> Scenario:
    chart_t = _require(data, "chart", "scenario")
    chart = _chart(chart_t)
    tol_t = data.get("tolerances", {})
    tolerances = Tolerances.for_chart(
        chart,
        number(tol_t["eps_mem"], "tolerances.eps_mem") if "eps_mem" in tol_t else None,
        number(tol_t["eps_coincide"], "tolerances.eps_coincide") if "eps_coincide" in tol_t else None,
        number(tol_t["theta_tol"], "tolerances.theta_tol") if "theta_tol" in tol_t else None,
    )
    sc = Scenario(str(data.get("name", path.stem if path else "scenario")), path, chart, tolerances)

    dims = set()
    for k, bt in enumerate(data.get("branches", [])):
        p = f"branches[{k}]"
        corners = _vector(bt.get("corners", []), f"{p}.corners")
        intervals = []
        for i, iv in enumerate(bt.get("intervals", [])):
            if not isinstance(iv, list) or len(iv) != 2:
                raise ScenarioError(f"{p}.intervals[{i}]", "expected [lower, upper]")
            intervals.append(_vector(iv, f"{p}.intervals[{i}]"))
        periodic = bt.get("periodic", [False] * len(intervals))
        try:
            Q = ParamDomain(corners, tuple(intervals), tuple(periodic))
        except ValueError as e:
            raise ScenarioError(p, str(e)) from None
        phi = _expressions(_require(bt, "map", p), Q.n, f"{p}.map")
        if phi.coarity != chart.dim:
            raise ScenarioError(f"{p}.map", f"has {phi.coarity} components, chart dimension is {chart.dim}")
        weight = rational(bt.get("weight", 1), f"{p}.weight")
        if weight <= 0:
            raise ScenarioError(f"{p}.weight", "weights must be strictly positive")
        orientation = bt.get("orientation", 1)
        if orientation not in (1, -1):
            raise ScenarioError(f"{p}.orientation", "must be 1 or -1")
        resolution = bt.get("resolution", 8)
        if not isinstance(resolution, int) or resolution < 1:
            raise ScenarioError(f"{p}.resolution", "must be a positive integer")
        branch = Branch(phi, Q, orientation, resolution, str(bt.get("name", f"branch{k}")))
        structure = str(bt.get("structure", "main"))
        sc.branches.setdefault(structure, []).append((branch, weight))
        sc.branch_specs.append(bt)
        dims.add((structure, Q.n))
    for name in sc.branches:
        if len({n for s, n in dims if s == name}) > 1:
            raise ScenarioError(f"structure {name!r}", "branches of different dimensions")

    for name, ft in data.get("forms", {}).items():
        p = f"forms.{name}"
        dim = ft.get("dim", chart.dim)
        degree = _require(ft, "degree", p)
        terms = ft.get("terms", {})
        if not isinstance(terms, dict):
            raise ScenarioError(f"{p}.terms", "expected a table from multi-index to expression")
        try:
            sc.forms[name] = DifferentialForm(dim, degree, {k: v for k, v in terms.items()})
        except ValueError as e:
            raise ScenarioError(p, str(e)) from None

    for name, sets in data.get("covers", {}).items():
        p = f"covers.{name}"
        if not isinstance(sets, list) or not sets:
            raise ScenarioError(p, "expected a non-empty list of sets")
        cover = [domain_from(t, f"{p}[{i}]") for i, t in enumerate(sets)]
        for i, U in enumerate(cover):
            if U.dim != chart.dim:
                raise ScenarioError(f"{p}[{i}]", "dimension differs from the chart")
        sc.covers[name] = cover

    for name, mt in data.get("maps", {}).items():
        p = f"maps.{name}"
        sc.maps[name] = _expressions(_require(mt, "map", p), mt.get("arity", chart.dim), f"{p}.map")

    if "multisection" in data:
        sc.multisection = _multisection(data["multisection"])

    commands = data.get("commands", {})
    if not isinstance(commands, dict):
        raise ScenarioError("commands", "expected a table")
    sc.commands = commands
    _check_references(sc)
    return sc


def _chart(t: dict) -> Chart:
    domain = domain_from(t, "chart")
    if "dim" in t and t["dim"] != domain.dim:
        raise ScenarioError("chart.dim", f"domain has dimension {domain.dim}")
    elements = t.get("elements")
    if elements is None:
        return Chart(domain)
    maps = [_expressions(e, domain.dim, f"chart.elements[{i}]") for i, e in enumerate(elements)]
    table = t.get("table")
    identity = int(t.get("identity", 0))
    if table is not None:
        _validate_table(table, len(maps), identity)
    try:
        return Chart(domain, maps, table, identity, t.get("names"))
    except ValueError as e:
        raise ScenarioError("chart", str(e)) from None


def _validate_table(table, order: int, identity: int) -> None:
    if not isinstance(table, list) or len(table) != order:
        raise ScenarioError("chart.table", f"expected {order} rows")
    for i, row in enumerate(table):
        if not isinstance(row, list) or len(row) != order:
            raise ScenarioError(f"chart.table[{i}]", f"expected {order} entries")
        if identity not in row:
            raise ScenarioError(f"chart.table[{i}]", "element has no inverse")
        if sorted(row) != list(range(order)):
            raise ScenarioError(f"chart.table[{i}]", "row is not a permutation of the elements")


def _multisection(t: dict) -> dict:
    p = "multisection"
    box = domain_from({"box": _require(t, "box", p)}, f"{p}.box")
    f = _expressions(_require(t, "section", p), box.dim, f"{p}.section")
    corners = tuple(t.get("corners", []))
    specs = t.get("sections")
    if specs is None:
        multi = Multisection.trivial(box.dim, f.coarity)
    else:
        sections, weights = [], []
        for i, st in enumerate(specs):
            sections.append(_expressions(_require(st, "map", f"{p}.sections[{i}]"), box.dim,
                                         f"{p}.sections[{i}].map"))
            w = rational(_require(st, "weight", f"{p}.sections[{i}]"), f"{p}.sections[{i}].weight")
            if w <= 0:
                raise ScenarioError(f"{p}.sections[{i}].weight", "weights must be strictly positive")
            weights.append(w)
        try:
            multi = Multisection(sections, weights)
        except ValueError as e:
            raise ScenarioError(f"{p}.sections", str(e)) from None
    homotopy = None
    if "homotopy" in t:
        homotopy = _expressions(t["homotopy"], box.dim + 1, f"{p}.homotopy")
    out = {
        "section": ToySection(f, box, corners),
        "multi": multi,
        "box": box,
        "corners": corners,
        "homotopy": homotopy,
        "resolution": int(t.get("resolution", 64)),
    }
    return out


_FORM_KEYS = ("form", "form2", "tau", "omega")
_STRUCTURE_KEYS = ("structure", "structure2")


def _check_references(sc: Scenario) -> None:
    for cmd, base in sc.commands.items():
        if not isinstance(base, dict):
            raise ScenarioError(f"commands.{cmd}", "expected a table")
        cases = base.get("cases", [{}])
        if not isinstance(cases, list) or not all(isinstance(c, dict) for c in cases):
            raise ScenarioError(f"commands.{cmd}.cases", "expected a list of tables")
        for k, case in enumerate(cases):
            _check_command(sc, f"commands.{cmd}" + (f".cases[{k}]" if "cases" in base else ""),
                           {**base, **case})


def _check_command(sc: Scenario, p: str, t: dict) -> None:
    for key in _FORM_KEYS:
        v = t.get(key)
        if isinstance(v, str) and v not in sc.forms and not _is_constant(v):
            raise ScenarioError(f"{p}.{key}", f"unknown form {v!r}")
    for key in _STRUCTURE_KEYS:
        v = t.get(key)
        if v is not None and v not in sc.branches:
            raise ScenarioError(f"{p}.{key}", f"unknown structure {v!r}")
    for key in ("cover", "cover2"):
        v = t.get(key)
        if v is not None and v not in sc.covers:
            raise ScenarioError(f"{p}.{key}", f"unknown cover {v!r}")
    for v in list(t.get("maps", [])) + [t[k] for k in ("map", "inverse") if k in t] + list(
            t.get("inverses", {}).values()):
        if v not in sc.maps:
            raise ScenarioError(f"{p}.maps", f"unknown map {v!r}")


def _is_constant(text: str) -> bool:
    try:
        Fraction(text)
        return True
    except (ValueError, ZeroDivisionError):
        return False
