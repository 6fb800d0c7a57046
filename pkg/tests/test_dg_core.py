import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import golden
from ffdg.dg_core import (assemble_flux, assemble_generator, assemble_mass, assemble_stiffness,
                          check_generator, compute_eta, conservation_defect, mass_inverse,
                          phase_generator, propagate)
from ffdg.errors import ConservationViolation, IllDefinedEta, SpectrumViolation
from ffdg.stencil import Stencil, make_basis


def test_golden_mass(example_basis):
    np.testing.assert_allclose(assemble_mass(example_basis), golden.M, atol=1e-12)


def test_golden_stiffness(example_basis):
    np.testing.assert_allclose(assemble_stiffness(example_basis), golden.G, atol=1e-12)


def test_golden_flux(example_basis):
    np.testing.assert_allclose(assemble_flux(example_basis, 1), golden.F, atol=1e-12)


def test_golden_eta(example_basis):
    assert tuple(compute_eta(example_basis, k, k + 1) for k in range(3)) == golden.ETA


def test_golden_generator(example_basis):
    np.testing.assert_allclose(phase_generator(1.0, example_basis), golden.Q, atol=1e-12)


def test_mass_inverse_exact(example_basis):
    np.testing.assert_allclose(mass_inverse(example_basis) @ assemble_mass(example_basis),
                               np.eye(6), atol=1e-14)


def test_eta_requires_adjacent(example_basis):
    with pytest.raises(IllDefinedEta):
        compute_eta(example_basis, 0, 2)


def test_negative_drift_closes_at_zero(example_basis):
    Q = phase_generator(-1.0, example_basis)
    assert np.all(Q[0] == 0.0)
    np.testing.assert_allclose(Q.sum(axis=1), 0.0, atol=1e-12)
    # mass moves left: nothing flows from mesh 2 to mesh 3
    assert np.all(Q[1:3, 3:] == 0.0)


def test_open_flux_leaks(example_basis):
    F = assemble_flux(example_basis, 1, closed=False)
    Q = (assemble_stiffness(example_basis) + F) @ mass_inverse(example_basis)
    assert Q[-1, -1] < 0  # outflow at the top removes mass


def test_zero_rate_phase_is_zero(example_basis):
    assert not np.any(phase_generator(0.0, example_basis))


def test_check_generator_flags():
    with pytest.raises(ConservationViolation):
        check_generator(np.array([[-1.0, 0.5], [0.0, 0.0]]))
    with pytest.raises(SpectrumViolation):
        check_generator(np.array([[1.0, -1.0], [0.0, 0.0]]))


def test_bandwidth_generators(bandwidth, omega_basis):
    gens = assemble_generator(bandwidth, omega_basis)
    for Q in gens.Q:
        assert np.abs(Q.sum(axis=1)).max() <= 1e-10
        assert np.linalg.eigvals(Q).real.max() <= 1e-8


def test_propagate_moves_mass_right(example_basis):
    Q = phase_generator(1.0, example_basis)
    a = np.array([1.0 / 0.25, 0, 0, 0, 0, 0])  # unit mass in the first mesh
    late = propagate(Q, example_basis, a, 50.0)
    masses = late * example_basis.weights
    assert masses[-1] == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 2.0), min_size=3, max_size=12), st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3),
       st.integers(0, 1), st.floats(0.01, 10.0))
def test_random_stencil_generator_conserves(widths, c, degree, t):
    b = make_basis(Stencil(np.concatenate([[0.0], np.cumsum(widths)])), degree)
    Q = phase_generator(c, b)
    check_generator(Q)
    alpha = np.random.default_rng(0).random(b.N)
    assert conservation_defect(Q, b, alpha, t) <= 1e-8 * max(1.0, alpha @ b.weights)
