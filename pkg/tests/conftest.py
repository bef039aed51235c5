import math

import numpy as np
import pytest

from branchform import BranchingStructure, Chart, load_scenario
from branchform.cli import resolve_scenario
from branchform.expr import SmoothMap
from branchform.geometry import Box, Branch, ParamDomain

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'}  {detail}")


def scenario(name: str):
    return load_scenario(resolve_scenario(name))


@pytest.fixture
def square_chart():
    return Chart(Box((-2.0, -2.0), (2.0, 2.0)))


def circle_branch(resolution: int = 8, orientation: int = 1, name: str = "circle") -> Branch:
    return Branch(
        SmoothMap.from_strings(["cos(x0)", "sin(x0)"], 1),
        ParamDomain(intervals=((0.0, 2 * math.pi),), periodic=(True,)),
        orientation,
        resolution,
        name,
    )


def disk_branch(resolution: int = 4) -> Branch:
    return Branch(
        SmoothMap.from_strings(["(1 - x0)*cos(x1)", "(1 - x0)*sin(x1)"], 2),
        ParamDomain(corners=(1.0,), intervals=((0.0, 2 * math.pi),), periodic=(True,)),
        -1,
        resolution,
        "disk",
    )


@pytest.fixture
def circle(square_chart):
    return BranchingStructure(square_chart, [circle_branch()], [1])


@pytest.fixture
def disk(square_chart):
    return BranchingStructure(square_chart, [disk_branch()], [1])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
