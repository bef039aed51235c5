"""Two curves that touch to third order: the bad set shrinks like the mesh width.

Run with ``python demos/tangent_curves.py``.
"""

from branchform import (
    Box,
    Branch,
    BranchingStructure,
    Chart,
    ParamDomain,
    SmoothMap,
    bad_set_density,
    classify_point,
    theta,
)

line = ParamDomain(intervals=((-1.0, 1.0),))
s = BranchingStructure(
    Chart(Box((-2, -2), (2, 2))),
    [Branch(SmoothMap.from_strings(["x0", "0"], 1), line),
     Branch(SmoothMap.from_strings(["x0", "x0^3"], 1), line)],
    ["1/3", "2/3"],
)

for x in ([0.5, 0.0], [0.5, 0.125], [0.0, 0.0]):
    c = classify_point(s, x, 0.1)
    print(f"x = {x}: weight {theta(s, x)}, {c.classification}")

previous = None
for resolution in (8, 16, 32, 64, 128):
    fraction = bad_set_density(s, resolution)
    ratio = "" if previous is None else f"  ratio {fraction / previous:.3f}"
    print(f"resolution {resolution:4d}: bad fraction {fraction:.5f}{ratio}")
    previous = fraction
