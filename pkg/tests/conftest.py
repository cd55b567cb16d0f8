import pytest

from hartree_lab.acceptance import AcceptanceLab

_LINES = {}


@pytest.fixture(scope="session")
def lab():
    """d = 5 ground states, linearized systems and eigenpairs, built once per resolution."""
    return AcceptanceLab(d=5, seed=0)


@pytest.fixture(scope="session")
def gs(lab):
    return lab.ground(1024)


@pytest.fixture(scope="session")
def system(lab):
    return lab.system(1024)


@pytest.fixture(scope="session")
def pair(lab):
    return lab.pair(1024)


@pytest.fixture(scope="session")
def acceptance_lines():
    return _LINES


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        terminalreporter.write_line(_LINES[number])
