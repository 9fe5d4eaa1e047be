import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dpsoliton.sigkit import make_grid

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def wide_grid():
    """Fine normalized grid on which truncation and discretization stay below 1e-6."""
    return make_grid(65536, 40.0 / 65536)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(criterion: int, ok: bool, detail: str) -> bool:
        _VERDICTS[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
