import pytest

from helpers import ACCEPTANCE, scalar_cubic_structure


@pytest.fixture
def cubic_ms():
    return scalar_cubic_structure()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
