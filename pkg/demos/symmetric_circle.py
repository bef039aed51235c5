"""Measures of a circle in a chart with a point-reflection symmetry.

Run with ``python demos/symmetric_circle.py``.
"""

import math

import numpy as np

from branchform import (
    Ball,
    Box,
    Branch,
    BranchingStructure,
    Chart,
    DifferentialForm,
    ParamDomain,
    SmoothMap,
    build_partition_of_unity,
    chart_measure,
    global_measure,
    stokes,
)

box = Box((-2, -2), (2, 2))
circle = Branch(
    SmoothMap.from_strings(["cos(x0)", "sin(x0)"], 1),
    ParamDomain(intervals=((0.0, 2 * math.pi),), periodic=(True,)),
    resolution=16,
)
arc = DifferentialForm(2, 1, {"0": "-x1", "1": "x0"})

plain = BranchingStructure(Chart(box), [circle], [1])
symmetric = BranchingStructure(Chart.from_matrices(box, [np.eye(2), -np.eye(2)]), [circle], [1])

for label, s in (("trivial group", plain), ("point reflection", symmetric)):
    m = chart_measure(s, arc)
    print(f"{label:>17}: measure {m.value:.15f}  prefactor {m.prefactors[0]}")

cover = [Ball((0.8, 0.3), 1.4), Ball((-0.8, -0.3), 1.4)]
pou = build_partition_of_unity(symmetric.chart, cover, symmetric.support_samples())
print("partition of unity check:", pou.check(symmetric.support_samples(256)).passed)
print("glued over the cover:   ", global_measure(symmetric, arc, cover).value)

disk = BranchingStructure(Chart(box), [Branch(
    # the corner q = 0 is the rim; the radius is 1 - q
    SmoothMap.from_strings(["(1 - x0)*cos(x1)", "(1 - x0)*sin(x1)"], 2),
    ParamDomain(corners=(1.0,), intervals=((0.0, 2 * math.pi),), periodic=(True,)),
    orientation=-1, resolution=6,
)], [1])
r = stokes(disk, DifferentialForm(2, 1, {"0": "-x1*exp(x0)", "1": "sin(x0*x1) + x0^3"}), order=8)
print(f"Stokes on the disk: interior {r.interior.value:.12f} boundary {r.boundary.value:.12f} "
      f"residual {r.residual:.1e}")
