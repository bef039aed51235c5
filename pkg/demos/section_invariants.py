"""Weighted zero counts of sections, and their behaviour along a homotopy.

Run with ``python demos/section_invariants.py``.
"""

from branchform import (
    Box,
    DifferentialForm,
    Multisection,
    SmoothMap,
    ToySection,
    homotopy_invariance_check,
    invariant_psi,
    solve,
)

line = Box((-2,), (2,))

square = ToySection(SmoothMap.from_strings(["x0^2"], 1), line)
shifted = Multisection([SmoothMap.from_strings(["1/100"], 1), SmoothMap.from_strings(["-1/100"], 1)],
                       ["1/2", "1/2"])
for z in solve(square, shifted).zeros:
    print(f"sheet {z.index} (weight {z.weight}): zeros {z.points[:, 0].round(12).tolist()} signs {list(z.signs)}")
print("count for x^2 with the two-sheet perturbation:", invariant_psi(square, shifted, "1"))

cubic = ToySection(SmoothMap.from_strings(["x0^3 - x0"], 1), line)
print("count for x^3 - x:", invariant_psi(cubic, Multisection.trivial(1, 1), "1"))

report = homotopy_invariance_check(SmoothMap.from_strings(["x0^3 - x0 + 1/10*x1"], 2), line,
                                   Multisection.trivial(1, 1), "1", steps=11)
print("along x^3 - x + t/10:", [str(v) for v in report.values["psi"]], "passed:", report.passed)

circle = ToySection(SmoothMap.from_strings(["x0^2 + x1^2 - 1"], 2), Box((-2, -2), (2, 2)))
arc = DifferentialForm(2, 1, {"0": "-x1", "1": "x0"})
for resolution in (16, 32, 64):
    print(f"solution circle at resolution {resolution}: integral of -y dx + x dy = "
          f"{invariant_psi(circle, Multisection.trivial(2, 1), arc, resolution=resolution):.8f}")
