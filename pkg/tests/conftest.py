import sys

import numpy as np
import pytest

from bsdelab import forward_sde as F
from bsdelab import generator as G
from bsdelab.bsde_solver import TerminalCondition
from bsdelab.regression import RegressionBasis


def constant_terminal(c):
    return TerminalCondition(lambda x, c=c: np.full(len(x), float(c)))


@pytest.fixture(scope="session")
def flat_bundle():
    """Deterministic factor (no noise): every path is the same ODE trajectory."""
    sde = F.SdeSpec(1, [0.0])
    return F.simulate(sde, F.make_grid(1.0, 200), 50, seed=3)


@pytest.fixture(scope="session")
def bm_bundle():
    sde = F.SdeSpec(1, [0.3], diffusion=0.5)
    return F.simulate(sde, F.make_grid(1.0, 50), 8000, seed=5)


@pytest.fixture(scope="session")
def one_bin():
    return RegressionBasis("partition", bins=1)


@pytest.fixture(scope="session")
def jump_measure():
    return G.JumpMeasure([0.0], [1.0])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
