import numpy as np
import pytest
from scipy.integrate import quad

from ffdg.errors import NoStationaryReturn, StationaryError
from ffdg.model import build_bandwidth_model
from ffdg.riccati import solve_psi
from ffdg.stationary import (first_fluid_stationary, solve_stationary, solve_xi)

ALPHAS = (11.0, 16.0, 22.0)


@pytest.mark.parametrize("a2", ALPHAS)
def test_normalised(stationary_solutions, a2):
    assert stationary_solutions[a2].total_probability() == pytest.approx(1.0, abs=1e-8)


def test_recurrence_flags(stationary_solutions):
    assert not stationary_solutions[11.0].recurrent
    assert stationary_solutions[16.0].recurrent and stationary_solutions[22.0].recurrent


def test_frozen_y_zero_masses(stationary_solutions):
    # values frozen from this solver; a long-run Monte Carlo run agrees (see test_montecarlo)
    assert stationary_solutions[16.0].y_zero_probability() == pytest.approx(0.13851, abs=1e-4)
    assert stationary_solutions[22.0].y_zero_probability() == pytest.approx(0.27563, abs=1e-4)
    assert stationary_solutions[11.0].y_zero_probability() == 0.0


def test_more_draining_means_more_time_at_zero(stationary_solutions):
    p = [stationary_solutions[a].y_zero_probability() for a in ALPHAS]
    assert p[0] < p[1] < p[2]


@pytest.mark.parametrize("a2", ALPHAS)
def test_split_invariance(stationary_solutions, a2):
    sol = stationary_solutions[a2]
    yz = sol.marginal_x("y_zero_positive")
    oo = sol.marginal_x("on_off")
    lhs = yz["0"].cell_masses() + yz["+"].cell_masses()
    rhs = oo["on"].cell_masses() + oo["off"].cell_masses()
    assert np.abs(lhs - rhs).max() <= 1e-8


def test_first_fluid_law_does_not_depend_on_second(stationary_solutions):
    chis = [stationary_solutions[a].marginal_x("on_off") for a in ALPHAS]
    for c in chis[1:]:
        np.testing.assert_allclose(c["on"].alpha, chis[0]["on"].alpha, atol=1e-9)


def test_xi_is_a_distribution(bandwidth_disc):
    psi = solve_psi(bandwidth_disc.D).psi
    xi = solve_xi(bandwidth_disc.B, psi)
    assert xi.sum() == pytest.approx(1.0)
    assert len(xi) == len(bandwidth_disc.B.indices("-"))


def test_xi_fails_when_transient(omega_basis):
    sol = solve_stationary(build_bandwidth_model(alpha2=11.0), omega_basis)
    with pytest.raises(NoStationaryReturn):
        solve_xi(sol.B, sol.psi.psi)
    with pytest.raises(NoStationaryReturn):
        solve_stationary(build_bandwidth_model(alpha2=11.0), omega_basis, allow_transient=False)


def test_y_zero_mass_lives_on_nonpositive_classes(stationary_solutions):
    sol = stationary_solutions[22.0]
    assert np.all(sol.p[sol.B.indices("+")] == 0.0)


def test_density_integrates_to_y_positive_mass(stationary_solutions):
    sol = stationary_solutions[22.0]
    total = lambda y: sum(cv.mass() for cv in sol.density_at_y(y).values())
    val, _ = quad(total, 0, np.inf, limit=200)
    assert val == pytest.approx(float(sol.int_density.sum()), rel=1e-6)


def test_density_decays_in_y(stationary_solutions):
    sol = stationary_solutions[22.0]
    m = [sum(cv.mass() for cv in sol.density_at_y(y).values()) for y in (0.0, 5.0, 50.0)]
    assert m[0] > m[1] > m[2] >= 0


def test_integrated_density_by_class(stationary_solutions):
    sol = stationary_solutions[22.0]
    parts = sol.integrated_density()
    assert sum(cv.mass() for cv in parts.values()) == pytest.approx(sol.int_density.sum())


def test_transient_density_request_fails(stationary_solutions):
    with pytest.raises(StationaryError):
        stationary_solutions[11.0].density_at_y(1.0)


def test_transient_carries_first_fluid_law(stationary_solutions):
    sol = stationary_solutions[11.0]
    np.testing.assert_allclose(sol.int_density, first_fluid_stationary(sol.B), atol=1e-14)


def test_summary_fields(stationary_solutions):
    s = stationary_solutions[22.0].summary()
    for key in ("P_Y_zero", "P_Y_positive", "psi_iterations", "N", "n_meshes"):
        assert key in s


def test_bad_split(stationary_solutions):
    with pytest.raises(ValueError):
        stationary_solutions[22.0].marginal_x("left_right")


@pytest.mark.parametrize("a2", ALPHAS)
def test_reported_masses_and_coefficients_nonnegative(stationary_solutions, a2):
    sol = stationary_solutions[a2]
    assert sol.point_masses().alpha.min() >= -1e-9
    for cv in sol.integrated_density().values():
        assert cv.alpha.min() >= -1e-9
    if sol.recurrent:
        for y in (0.0, 0.5, 3.0):
            for cv in sol.density_at_y(y).values():
                assert cv.alpha.min() >= -1e-9
