import numpy as np
import pytest

from critmass.energy import MassConstraint, SystemParams
from critmass.fields import Grid
from critmass.minimize import critical_profile, minimize

# the reference setting shared by several suites: N=1, unit mu, beta=1, r=3/2
REFERENCE = dict(dim=1, mu1=1.0, mu2=1.0, beta=1.0, r1=1.5, r2=1.5)


@pytest.fixture(scope="session")
def params():
    return SystemParams(**REFERENCE)


@pytest.fixture(scope="session")
def q1():
    return critical_profile(1)


@pytest.fixture(scope="session")
def q2():
    return critical_profile(2)


@pytest.fixture(scope="session")
def grid1():
    return Grid(1, 1024, 24.0)


@pytest.fixture(scope="session")
def half_critical(params, q1):
    return MassConstraint(0.5 * q1.mass, 0.5 * q1.mass)


@pytest.fixture(scope="session")
def minimizer(params, half_critical, grid1):
    return minimize(params, half_critical, grid1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed live and again in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def report(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(number, ok, detail, part=""):
        label = f"criterion {number}{' ' + part if part else ''}"
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        with capman.global_and_fixture_disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda item: item[0]):
            terminalreporter.write_line(line)
