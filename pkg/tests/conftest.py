import numpy as np
import pytest

from cfoed import CaseKind, ModelProblemSpec, PriorSpec
from cfoed.fem import ExperimentDesign, Mesh1D

F_CASES = [CaseKind.PARAMETERIZED_BC, CaseKind.PARAMETERIZED_SOURCE, CaseKind.MISSPECIFIED_SOURCE]


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def mesh64():
    return Mesh1D.uniform(64)


@pytest.fixture
def spec111():
    return ModelProblemSpec(k=1.0, b=1.0, p=1.0)


def single(mesh, beta, bounds=None):
    return ExperimentDesign.on_mesh(mesh, [beta], bounds)


def prior_for(case, spec):
    """Uniform prior around the consistent value (or around 1 when there is none)."""
    if case is CaseKind.PARAMETERIZED_MATERIAL:
        return PriorSpec.uniform([0.5 * spec.k], [1.5 * spec.k])
    return PriorSpec.uniform([0.5], [1.5])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[0][2:])):
            terminalreporter.write_line(line)
