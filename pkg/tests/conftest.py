import numpy as np
import pytest

from ipva import slin
from ipva.params import table1
from ipva.road import RoadModel


@pytest.fixture(scope="session")
def p():
    return table1()


@pytest.fixture(scope="session")
def sl_model(p):
    """Stochastic linearization at the reference design, shared by the MPC tests."""
    return slin.build_model(p, RoadModel(seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def emit(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.stash[_VERDICTS].append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
