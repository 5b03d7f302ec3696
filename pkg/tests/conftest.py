import pytest

from pseudomatch.fixpoint import iterate_fixpoint
from pseudomatch.operators import build_operator
from pseudomatch.randomness import Params

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def fp_half():
    return iterate_fixpoint(Params(0.5, 1.0), N=512)


@pytest.fixture(scope="session")
def ops_half(fp_half):
    return build_operator("A", fp_half), build_operator("B", fp_half)


@pytest.fixture(scope="session")
def fp_small():
    return iterate_fixpoint(Params(0.7, 1.5), N=64)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
