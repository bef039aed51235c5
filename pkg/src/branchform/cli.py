"""Command-line front end: ``branchform COMMAND SCENARIO [flags]``.

Exit status is 0 when every check passes, 2 when a verification fails and 1
on any error.  Reports are deterministic: the same scenario and flags give
byte-identical output whatever ``--threads`` is.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import measure as M
from .branched import bad_set_density
from .forms import DifferentialForm
from .multisection import PropernessError, NotInGoodPosition, homotopy_invariance_check, invariant_psi, solve
from .report import Report, to_jsonable
from .scenario import Scenario, ScenarioError, domain_from, load_scenario, number

COMMANDS = (
    "integrate", "boundary", "stokes", "verify-independence", "verify-restriction",
    "verify-morphism", "verify-pou", "classify", "invariant", "homotopy",
)


class CommandError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CommandError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="branchform", description="Measures and invariants of weighted branched structures.")
    p.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("scenario", help="scenario file, or the name of a bundled scenario")
    p.add_argument("--refine", type=int, default=1, help="mesh-resolution multiplier (stokes: number of refinement rows)")
    p.add_argument("--quad-order", type=int, default=M.DEFAULT_ORDER, help="Gauss-Legendre order per cell and axis")
    p.add_argument("--tol", type=float, default=None, help="override the pass/fail tolerance")
    p.add_argument("--report", type=Path, default=None, help="also write the report to this file")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    return p


def resolve_scenario(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("branchform") / "scenarios" / path.name
    if bundled.is_file():
        return Path(str(bundled))
    if not path.suffix:
        return resolve_scenario(name + ".scn")
    raise ScenarioError(name, "no such scenario file (nor a bundled one)")


# ---------------------------------------------------------------------------
# helpers


class Context:
    def __init__(self, sc: Scenario, command: str, args):
        self.sc = sc
        self.cfg = dict(sc.commands.get(command, {}))
        self.args = args
        self.order = args.quad_order
        self.threads = args.threads
        self.refine = args.refine

    def tol(self, default: float) -> float:
        if self.args.tol is not None:
            return self.args.tol
        return number(self.cfg["tol"], "tol") if "tol" in self.cfg else default

    def structure(self, key: str = "structure", refine: int | None = None):
        return self.sc.structure(self.cfg.get(key, "main"), self.refine if refine is None else refine)

    def form(self, key: str = "form", required: bool = True) -> DifferentialForm | None:
        if key not in self.cfg:
            if required:
                raise ScenarioError(f"commands.{self.args.command}.{key}", "missing required field")
            return None
        return self.sc.form(self.cfg[key])

    def region(self):
        if "region" in self.cfg:
            return M.Region.inside(domain_from(self.cfg["region"], "region"))
        return None

    def cover(self, key: str = "cover"):
        return self.sc.cover(self.cfg.get(key))


def _expected_check(name: str, value: float, ctx: Context, tol: float) -> Report | None:
    if "expected" not in ctx.cfg:
        return None
    expected = number(ctx.cfg["expected"], "expected")
    diff = abs(value - expected)
    return Report(f"{name}_expected", diff <= tol, {"value": value, "expected": expected, "difference": diff},
                  tolerance=tol)


# ---------------------------------------------------------------------------
# commands


def cmd_integrate(ctx: Context, boundary: bool = False):
    s = ctx.structure()
    omega = ctx.form()
    tol = ctx.tol(1e-9)
    fn = M.global_boundary_measure if boundary else M.global_measure
    r = fn(s, omega, ctx.cover(), ctx.region(), order=ctx.order, threads=ctx.threads)
    name = "boundary_measure" if boundary else "measure"
    rep = Report(name, True,
                 {"value": r.value, "error_estimate": r.error_estimate, "contributions": r.contributions,
                  "effective_group_order": r.effective_order},
                 {f"term{i}": p for i, p in enumerate(r.prefactors)})
    reports = [rep]
    exp = _expected_check(name, r.value, ctx, tol)
    if exp is not None:
        reports.append(exp)
    return reports, None


def cmd_stokes(ctx: Context):
    omega = ctx.form()
    tol = ctx.tol(1e-8)
    rows = []
    for k in range(1, max(ctx.refine, 1) + 1):
        s = ctx.structure(refine=k)
        st = M.stokes(s, omega, ctx.cover(), ctx.order, ctx.threads)
        rows.append({"refine": k, "interior": st.interior.value, "boundary": st.boundary.value,
                     "residual": st.residual})
    last = rows[-1]
    reports = [Report("stokes", abs(last["residual"]) <= tol,
                      {"interior": last["interior"], "boundary": last["boundary"],
                       "residual": last["residual"]}, tolerance=tol)]
    if "expected" in ctx.cfg:
        expected = number(ctx.cfg["expected"], "expected")
        for side in ("interior", "boundary"):
            diff = abs(last[side] - expected)
            reports.append(Report(f"stokes_{side}_expected", diff <= tol,
                                  {"value": last[side], "expected": expected, "difference": diff},
                                  tolerance=tol))
    return reports, rows


def cmd_independence(ctx: Context):
    s1 = ctx.structure()
    s2 = ctx.structure("structure2")
    return [M.verify_independence(s1, s2, ctx.form(), ctx.region(), ctx.tol(1e-9), ctx.order)], None


def cmd_restriction(ctx: Context):
    s = ctx.structure()
    cfg = ctx.cfg
    if "point" not in cfg or "V" not in cfg:
        raise ScenarioError("commands.verify-restriction", "needs 'point' and 'V'")
    x = np.array([number(v, "point") for v in cfg["point"]])
    V = domain_from(cfg["V"], "commands.verify-restriction.V")
    return [M.verify_restriction(s, x, V, ctx.form(), ctx.tol(1e-9), ctx.order)], None


def cmd_morphism(ctx: Context):
    s = ctx.structure()
    omega = ctx.form()
    names = ctx.cfg.get("maps") or ([ctx.cfg["map"]] if "map" in ctx.cfg else [])
    inverses = dict(ctx.cfg.get("inverses", {}))
    if "inverse" in ctx.cfg and len(names) == 1:
        inverses[names[0]] = ctx.cfg["inverse"]
    reports = []
    for name in names:
        inv = ctx.sc.map(inverses[name]) if name in inverses else None
        rep = M.verify_morphism_invariance(s, ctx.sc.map(name), omega, inv, ctx.tol(1e-9), ctx.order)
        rep.values["map"] = name
        reports.append(rep)
    if not reports:
        raise ScenarioError("commands.verify-morphism.maps", "no maps listed")
    return reports, None


def cmd_pou(ctx: Context):
    s = ctx.structure()
    nodes = int(ctx.cfg.get("nodes", 512))
    order = 2
    pts = s.support_samples(order=order)
    while len(pts) < nodes:
        order += 1
        pts = s.support_samples(order=order)
    pts = s.support_samples(nodes, order)
    reports = []
    measures = []
    for key in ("cover", "cover2"):
        if key not in ctx.cfg:
            continue
        try:
            pou = M.build_partition_of_unity(s.chart, ctx.cover(key))
        except ValueError as e:
            raise ScenarioError(f"commands.verify-pou.{key}", str(e)) from None
        rep = pou.check(pts, tol=ctx.tol(1e-12))
        rep.values["cover"] = ctx.cfg[key]
        reports.append(rep)
        omega = ctx.form(required=False)
        if omega is not None and rep.passed:
            measures.append(M.global_measure(s, omega, pou, order=ctx.order, threads=ctx.threads).value)
    if not reports:
        raise ScenarioError("commands.verify-pou.cover", "missing required field")
    omega = ctx.form(required=False)
    if omega is not None:
        single = M.chart_measure(s, omega, order=ctx.order, threads=ctx.threads).value
        diffs = [abs(m - single) for m in measures]
        cover_tol = 1e-8
        reports.append(Report("cover_independence", all(d <= cover_tol for d in diffs) and len(measures) == len(reports),
                              {"single_chart": single, "covers": measures, "differences": diffs},
                              tolerance=cover_tol))
    return reports, None


def cmd_classify(ctx: Context):
    s = ctx.structure()
    radius = number(ctx.cfg.get("radius", 0.1), "radius")
    reports, rows = [], []
    points = ctx.cfg.get("points", [])
    classes = []
    for p in points:
        x = np.array([number(v, "points") for v in p])
        c = s.classify_point(x, radius)
        classes.append({"x": x, "classification": c.classification,
                        "incidence": list(c.incidence), "partition": [list(q) for q in c.partition]})
    expected = ctx.cfg.get("expected", [])
    ok = all(c["classification"] == e for c, e in zip(classes, expected))
    if points:
        reports.append(Report("classify_points", ok, {"points": classes}))
    resolutions = ctx.cfg.get("resolutions", [])
    if resolutions:
        dens = [bad_set_density(s, int(r) * ctx.refine, radius) for r in resolutions]
        ratios = [b / a if a else None for a, b in zip(dens, dens[1:])]
        rows = [{"resolution": int(r) * ctx.refine, "bad_fraction": d} for r, d in zip(resolutions, dens)]
        halving = all(q is not None and 0.4 <= q <= 0.6 for q in ratios)
        need = bool(ctx.cfg.get("expect_halving", False))
        reports.append(Report("bad_set_density", halving or not need,
                              {"fractions": dens, "ratios": ratios, "halving": halving}))
    if not reports:
        raise ScenarioError("commands.classify", "needs 'points' or 'resolutions'")
    return reports, rows


def _zero_form(ctx: Context, key: str):
    v = ctx.cfg.get(key)
    if v is None:
        return None
    if isinstance(v, str) and v in ctx.sc.forms:
        return ctx.sc.forms[v]
    return Fraction(v) if not isinstance(v, float) else v


def _psi_value(v):
    return v if isinstance(v, Fraction) else float(v)


def cmd_invariant(ctx: Context):
    f, m, resolution = ctx.sc.section(ctx.refine)
    omega = _zero_form(ctx, "omega")
    if omega is None:
        raise ScenarioError("commands.invariant.omega", "missing required field")
    tau = _zero_form(ctx, "tau")
    sol = solve(f, m, resolution)
    psi = invariant_psi(f, m, omega, tau, ctx.cover(), resolution, solution=sol)
    values = {"psi": _psi_value(psi), "solutions": [
        {"section": z.index, "weight": z.weight, "points": z.points if sol.dim == 0 else len(z.points),
         "signs": list(z.signs)} for z in sol.zeros]}
    reports = [sol.theta_check()]
    passed = True
    if "expected" in ctx.cfg:
        e = ctx.cfg["expected"]
        if isinstance(psi, Fraction) and not isinstance(e, float):
            passed = psi == Fraction(e)
            values["expected"] = Fraction(e)
        else:
            expected = number(e, "expected")
            passed = abs(float(psi) - expected) <= ctx.tol(1e-8)
            values["expected"] = expected
    reports.insert(0, Report("invariant_psi", passed, values))
    return reports, None


def cmd_homotopy(ctx: Context):
    ms = ctx.sc.multisection
    if ms is None or ms["homotopy"] is None:
        raise ScenarioError("multisection.homotopy", "missing required field")
    omega = _zero_form(ctx, "omega")
    tau = _zero_form(ctx, "tau")
    rep = homotopy_invariance_check(
        ms["homotopy"], ms["box"], ms["multi"], omega, tau,
        steps=int(ctx.cfg.get("steps", 21)), corners=ms["corners"], tol=ctx.tol(1e-9),
        resolution=ms["resolution"] * ctx.refine,
    )
    rows = [{"t": float(t), "psi": p} for t, p in zip(rep.values["t"], rep.values["psi"])]
    return [rep], rows


DISPATCH = {
    "integrate": cmd_integrate,
    "boundary": lambda ctx: cmd_integrate(ctx, boundary=True),
    "stokes": cmd_stokes,
    "verify-independence": cmd_independence,
    "verify-restriction": cmd_restriction,
    "verify-morphism": cmd_morphism,
    "verify-pou": cmd_pou,
    "classify": cmd_classify,
    "invariant": cmd_invariant,
    "homotopy": cmd_homotopy,
}


# ---------------------------------------------------------------------------
# output


def assemble(sc: Scenario, command: str, args, reports, rows) -> dict:
    return {
        "scenario": sc.name,
        "command": command,
        "flags": {"refine": args.refine, "quad_order": args.quad_order, "tol": args.tol},
        "passed": all(r.passed for r in reports),
        "reports": [r.to_dict() for r in reports],
        "table": to_jsonable(rows) if rows else [],
    }


def render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _flatten(prefix: str, value, out: list):
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], out)
    elif isinstance(value, list):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, "" if value is None else repr(value) if isinstance(value, float) else str(value)))


def render_csv(doc: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    rows: list = []
    _flatten("", {k: v for k, v in doc.items() if k != "table"}, rows)
    w.writerows(rows)
    if doc["table"]:
        w.writerow([])
        cols = list(doc["table"][0])
        w.writerow(cols)
        for r in doc["table"]:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return buf.getvalue()


def command_cases(sc: Scenario, command: str) -> list[dict]:
    """Command defaults merged with each entry of an optional ``cases`` list."""
    base = dict(sc.commands.get(command, {}))
    cases = base.pop("cases", None) or [{}]
    return [{**base, **case} for case in cases]


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        if args.command not in DISPATCH:
            raise CommandError(f"unknown command {args.command!r}; choose from {', '.join(COMMANDS)}")
        if args.refine < 1 or args.quad_order < 1 or args.threads < 1:
            raise CommandError("--refine, --quad-order and --threads must be positive")
        sc = load_scenario(resolve_scenario(args.scenario))
        reports, rows = [], []
        for case, cfg in enumerate(command_cases(sc, args.command)):
            ctx = Context(sc, args.command, args)
            ctx.cfg = cfg
            got, table = DISPATCH[args.command](ctx)
            if "label" in cfg:
                for r in got:
                    r.values["case"] = cfg["label"]
            reports.extend(got)
            rows.extend({"case": case, **r} for r in table or [])
        doc = assemble(sc, args.command, args, reports, rows)
    except (CommandError, ScenarioError, ValueError, NotImplementedError,
            PropernessError, NotInGoodPosition) as e:
        print(f"branchform: error: {e}", file=sys.stderr)
        return 1
    text = render_json(doc) if args.format == "json" else render_csv(doc)
    stdout.write(text)
    if args.report is not None:
        args.report.write_text(text, encoding="utf-8")
    return 0 if doc["passed"] else 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
