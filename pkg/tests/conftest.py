import pytest

from perpetuity import Uniform, atom, validate_model


@pytest.fixture(scope="session")
def uniform_model():
    """M ~ Uniform(0, 1), Q == 1: the Dickman case."""
    return validate_model(Uniform(0.0, 1.0), atom(1.0))


def pytest_terminal_summary(terminalreporter):
    from tests import _acceptance_log

    if _acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_log.LINES:
            terminalreporter.write_line(line)
