import numpy as np
import pytest

from qfeedback.hilbert import GridSpec, PotentialParams, build_space


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_space():
    return build_space(GridSpec(64, 8.0), PotentialParams())


@pytest.fixture(scope="session")
def free_space():
    return build_space(GridSpec(128, 16.0), PotentialParams(0.0, 0.0))


def random_rho(rng, d):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = g @ g.conj().T
    return r / np.trace(r).real


def random_herm(rng, d):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (g + g.conj().T)


# -- acceptance report ----------------------------------------------------------

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the terminal summary (and print it)."""

    def _report(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} | {detail}"
        print(line)
        _ACCEPTANCE_LINES.append((number, line))
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
