import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from ffdg.analysis import (analytic_chi_oracle, approximate_chi, boundary_width_study, chi_error,
                           convergence_study, fit_slope, point_mass_error, star_seminorm)
from ffdg.errors import AnalysisError, DegenerateSpectrum
from ffdg.model import ModelSpec, RateField


def poly_g(coefs):
    c = np.asarray(coefs).reshape(2, -1)
    return lambda x: np.vstack([np.polyval(c[0], x), np.polyval(c[1], x)])


def l1(g, length):
    return sum(quad(lambda x: abs(g(np.array([x]))[i, 0]), 0, length, limit=200)[0]
               for i in range(2))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(0.01, 1.0))
def test_star_bounded_by_l1(coefs, dh):
    g = poly_g(coefs)
    # quad resolves |g| at its kinks only to about 1e-9
    assert star_seminorm(g, 4.0, dh) <= l1(g, 4.0) * (1 + 1e-8) + 1e-8


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(-5, 5))
def test_star_homogeneous(coefs, lam):
    g = poly_g(coefs)
    lg = lambda x: lam * g(x)
    assert star_seminorm(lg, 4.0, 0.1) == pytest.approx(abs(lam) * star_seminorm(g, 4.0, 0.1),
                                                       rel=1e-9, abs=1e-12)


def test_star_equals_l1_for_constant_sign_boundaries():
    g = lambda x: np.vstack([np.sin(x) + 0.5, -np.cos(3 * x) * 0 + 0.2 - np.sin(2 * x)])
    # both components keep one sign on [0, 0.1] and [3.9, 4]
    assert star_seminorm(g, 4.0, 0.1) == pytest.approx(l1(g, 4.0), rel=1e-10)


def test_star_collapses_boundary_meshes():
    g = lambda x: np.vstack([np.where(x < 0.5, np.where(x < 0.25, 1.0, -1.0), 0.0)])
    assert star_seminorm(g, 2.0, 0.5, nodes=[0.25]) == pytest.approx(0.0, abs=1e-14)
    atoms = np.array([[0.3, -0.2]])
    assert star_seminorm(g, 2.0, 0.5, nodes=[0.25], atoms=atoms) == pytest.approx(0.5)


def test_oracle_two_phase_closed_form(birth_death_model):
    # leaving up at 1, down at 1, c = (1, -2): z = -1/2, F_u = (1 - e^{zx}) / 2,
    # F_d = 1/4 + (1 - e^{zx}) / 4
    o = analytic_chi_oracle(birth_death_model)
    x = np.linspace(0, 30, 61)
    e = np.exp(-0.5 * x)
    np.testing.assert_allclose(o.cdf(x)[0], 0.5 * (1 - e), atol=1e-10)
    np.testing.assert_allclose(o.cdf(x)[1], 0.25 + 0.25 * (1 - e), atol=1e-10)
    np.testing.assert_allclose(o.atom, [0.0, 0.25], atol=1e-12)
    np.testing.assert_allclose(o.density(x)[0], 0.25 * e, atol=1e-10)


def test_oracle_atom_only_in_draining_phases(bandwidth):
    o = analytic_chi_oracle(bandwidth)
    assert np.all(o.atom[bandwidth.c > 0] == 0)
    assert np.all(o.atom[bandwidth.c < 0] > 0)
    assert o.cdf([1e6])[:, 0].sum() == pytest.approx(1.0)


def test_truncated_oracle(bandwidth):
    o = analytic_chi_oracle(bandwidth, truncated=True)
    np.testing.assert_allclose(o.cdf([16.0])[:, 0], o.pi, atol=1e-12)
    assert np.all(o.atom_top[bandwidth.c < 0] == pytest.approx(0.0, abs=1e-10))
    u = analytic_chi_oracle(bandwidth)
    np.testing.assert_allclose(o.cdf([2.0]), u.cdf([2.0]), atol=5e-3)


def test_oracle_rejects_unstable():
    T = np.array([[-1.0, 1.0], [1.0, -1.0]])
    m = ModelSpec(("u", "d"), T, [2.0, -1.0], RateField([0.0], [[1.0], [-1.0]]), 10.0)
    with pytest.raises(DegenerateSpectrum):
        analytic_chi_oracle(m)


def test_fit_slope_power_law():
    h = np.array([1.0, 0.5, 0.25, 0.1])
    s, c, r2 = fit_slope(h, 3.0 * h ** 1.7)
    assert s == pytest.approx(1.7) and np.exp(c) == pytest.approx(3.0) and r2 == pytest.approx(1.0)
    with pytest.raises(AnalysisError):
        fit_slope([1.0, 0.5], [1.0, 0.5])
    with pytest.raises(AnalysisError):
        fit_slope([1.0, 0.5, 0.2], [1.0, 0.0, 0.1])


def test_chi_error_detects_perturbation(bandwidth):
    o = analytic_chi_oracle(bandwidth, truncated=True)
    chi, _ = approximate_chi(bandwidth, 0.5, 1e-6, 1)
    base = chi_error(o, chi, 16.0, 1e-6)
    shifted = type(chi)(chi.basis, chi.alpha * 1.01)
    assert chi_error(o, shifted, 16.0, 1e-6) > base
    assert 0 <= point_mass_error(o, chi, 1e-6) <= base + 1e-12


def test_convergence_study_small(bandwidth):
    rep = convergence_study(bandwidth, [1.0, 0.5, 0.25], degree=0)
    assert rep.errors[0] > rep.errors[1] > rep.errors[2]
    assert rep.n_elements[0] < rep.n_elements[1] < rep.n_elements[2]
    assert rep.r2 > 0.9
    assert len(rep.rows()) == 3


def test_boundary_study_constant_widths(bandwidth):
    rep = boundary_width_study(bandwidth, [0.005] * 3, reference_dh=0.005)
    assert rep.errors == [0.0, 0.0, 0.0]
    assert np.isnan(rep.slope)


def test_boundary_study_rejects_wide_mesh(bandwidth):
    with pytest.raises(AnalysisError):
        boundary_width_study(bandwidth, [1.5, 0.5, 0.1], h=1.0)
