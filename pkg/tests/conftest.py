import numpy as np
import pytest

from ffdg.model import ModelSpec, RateField, build_bandwidth_model
from ffdg.stationary import discretise, solve_stationary
from ffdg.stencil import Stencil, make_basis, make_omega_stencil

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bandwidth():
    return build_bandwidth_model()


@pytest.fixture(scope="session")
def omega_basis():
    return make_basis(make_omega_stencil(43, 0.4, 0.001), 1)


@pytest.fixture(scope="session")
def omega_basis0():
    return make_basis(make_omega_stencil(43, 0.4, 0.001), 0)


@pytest.fixture(scope="session")
def bandwidth_disc(bandwidth, omega_basis):
    return discretise(bandwidth, omega_basis)


@pytest.fixture(scope="session")
def stationary_solutions(omega_basis):
    return {a: solve_stationary(build_bandwidth_model(alpha2=a), omega_basis)
            for a in (11.0, 16.0, 22.0)}


@pytest.fixture(scope="session")
def example_stencil():
    """Four meshes on [0, 2.75]: constant boundary meshes, two linear interior ones."""
    return Stencil(np.array([0.0, 0.25, 1.25, 2.25, 2.75]))


@pytest.fixture(scope="session")
def example_basis(example_stencil):
    return make_basis(example_stencil, 1)


@pytest.fixture(scope="session")
def two_phase_example():
    """Phase 1 rises on [0, 1.25) and falls above; phase 2 does the opposite."""
    T = np.array([[-2.0, 2.0], [3.0, -3.0]])
    rates = RateField([0.0, 1.25], [[1.0, -1.0], [-1.0, 1.0]])
    return ModelSpec(("1", "2"), T, [1.0, -1.0], rates, 2.75)


@pytest.fixture(scope="session")
def birth_death_model():
    """Two-phase fluid queue: up at 1, down at 2, switching at rate 1 both ways."""
    T = np.array([[-1.0, 1.0], [1.0, -1.0]])
    return ModelSpec(("u", "d"), T, [1.0, -2.0], RateField([0.0], [[1.0], [-1.0]]), 40.0)
