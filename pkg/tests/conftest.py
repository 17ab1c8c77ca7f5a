import numpy as np
import pytest

from steinflow.fem import build_mesh
from steinflow.prior import build_prior
from steinflow.verify import darcy_problem, linear_problem


@pytest.fixture(scope="session")
def mesh8():
    return build_mesh(8)


@pytest.fixture(scope="session")
def prior8(mesh8):
    return build_prior(mesh8, 0.5)


@pytest.fixture(scope="session")
def darcy8():
    return darcy_problem(ng=8)


@pytest.fixture(scope="session")
def darcy16():
    return darcy_problem(ng=16)


@pytest.fixture(scope="session")
def linear8():
    return linear_problem(ng=8)


@pytest.fixture(scope="session")
def linear16():
    return linear_problem(ng=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}  # criterion number -> (passed, summary line); filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d}: {line}")


@pytest.fixture(scope="session")
def prior16():
    return build_prior(build_mesh(16), 0.5)
