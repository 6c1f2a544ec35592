import numpy as np
import pytest

from mixed_greens.dynamics import ModelSpec, Representation


@pytest.fixture
def free():
    return ModelSpec.free()


@pytest.fixture
def ho():
    return ModelSpec.oscillator()


@pytest.fixture
def pos1():
    return Representation(1)


@pytest.fixture
def mom1():
    return Representation(1, (0,))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; printed immediately and again in the terminal summary."""

    def record(name, passed, detail=""):
        line = f"{name}: {'PASS' if passed else 'FAIL'}" + (f"  ({detail})" if detail else "")
        print(line)
        request.config.stash[_ACCEPTANCE].append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
