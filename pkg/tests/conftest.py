import math

import numpy as np
import pytest
from hypothesis import settings

from dirac_spectral.bvp import BoundaryConditions
from dirac_spectral.dirac_solver import ConstantPotential, TrigPolyPotential, ZeroPotential

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")

LN2_OVER_PI = math.log(2.0) / math.pi


@pytest.fixture
def demo_bc():
    """y1(0) = 0, y2(0) - 2 y2(pi) = 0."""
    return BoundaryConditions([[1, 0, 0, 0], [0, 1, 0, -2]])


@pytest.fixture
def periodic_bc():
    return BoundaryConditions([[1, 0, -1, 0], [0, 1, 0, -1]])


PRESETS = {
    "zero": ZeroPotential(),
    "constant": ConstantPotential(1, 1),
    "trig": TrigPolyPotential({2: 1}, {-1: 1}),
}


def demo_eigenvalue(n):
    return complex(2 * n, -LN2_OVER_PI)


def rng(seed=0):
    return np.random.default_rng(seed)


#: (number, verdict, detail) lines appended by the acceptance suite
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {detail}")
