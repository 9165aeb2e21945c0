import math

import pytest

from cyclegas import lattice, potentials


@pytest.fixture(scope="session")
def gauss2_a3():
    return lattice.enumerate_cycles(2, lattice.Cutoffs(4, math.sqrt(2)), potentials.gaussian(2), 3.0)


@pytest.fixture(scope="session")
def gauss2_a1():
    return lattice.enumerate_cycles(2, lattice.Cutoffs(4, math.sqrt(2)), potentials.gaussian(2), 1.0)


@pytest.fixture(scope="session")
def gauss1_a1():
    return lattice.enumerate_cycles(1, lattice.Cutoffs(2, 1), potentials.gaussian(1), 1.0)


@pytest.fixture(scope="session")
def gauss2_a25():
    return lattice.enumerate_cycles(2, lattice.Cutoffs(4, math.sqrt(2)), potentials.gaussian(2), 2.5)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        title, status, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}  {detail}")
