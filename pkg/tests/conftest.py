import pytest

from bridgestab import galerkin
from bridgestab.cable import solve_cable_shape
from bridgestab.params import default_tnb

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def tnb():
    return default_tnb()


@pytest.fixture(scope="session")
def profile(tnb):
    return solve_cable_shape(tnb)


@pytest.fixture(scope="session")
def sys10(tnb, profile):
    return galerkin.assemble(tnb, profile, 10)


@pytest.fixture(scope="session")
def sys16(tnb, profile):
    return galerkin.assemble(tnb, profile, 16)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
