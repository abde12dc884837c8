import pytest

from eotlab.blockmodel import ModelParams, SequenceOverride, build_model

TINY_PARAMS = ModelParams(a=0.1, kappa=0.5, b=1.0, N=2)
TINY_OVERRIDE = SequenceOverride(m=[2, 2], L=[1, 16])
DEFAULT = dict(a=0.1, kappa=0.5, b=1.0)


@pytest.fixture(scope="session")
def tiny():
    return build_model(TINY_PARAMS, TINY_OVERRIDE)


@pytest.fixture(scope="session")
def model3():
    return build_model(ModelParams(N=3, **DEFAULT))


@pytest.fixture(scope="session")
def model18():
    return build_model(ModelParams(N=18, **DEFAULT))


@pytest.fixture(scope="session")
def solutions18():
    """Shared eps -> coupling cache for the N=18 default model."""
    return {}


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE_LINES
    except ImportError:
        return
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
