"""Deterministic quasi-random samples; BRANCHFORM_SEED selects the sequence."""

from __future__ import annotations

import os

import numpy as np
from scipy.stats import qmc


def seed() -> int:
    return int(os.environ.get("BRANCHFORM_SEED", "0"))


def halton(n: int, dim: int, offset: int = 0) -> np.ndarray:
    """``n`` scrambled Halton points in the unit cube ``[0, 1)^dim``."""
    if dim == 0:
        return np.zeros((n, 0))
    engine = qmc.Halton(dim, scramble=True, seed=seed() + offset)
    return engine.random(n)


def rng(offset: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed() + offset)
