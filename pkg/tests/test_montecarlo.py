import numpy as np
import pytest

from ffdg.errors import MonteCarloError, NoRetainedPaths
from ffdg.model import ModelSpec, RateField
from ffdg.montecarlo import (TRACE_FIELDS, empirical_return_cdf, estimate_stationary, ks_distance,
                             set_threads, simulate_first_return, simulate_first_returns)


def on_off_model(up_to_down, down_to_up):
    """Y rises at 1 in phase "u" and falls at 1 in phase "d"; X mirrors it."""
    T = np.array([[-up_to_down, up_to_down], [down_to_up, -down_to_up]])
    return ModelSpec(("u", "d"), T, [1.0, -1.0], RateField([0.0], [[1.0], [-1.0]]), 1e6)


def test_reproducible(bandwidth):
    a = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 2000, 1e4, seed=3)
    b = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 2000, 1e4, seed=3)
    np.testing.assert_array_equal(a.tau, b.tau)
    np.testing.assert_array_equal(a.x, b.x)
    c = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 2000, 1e4, seed=4)
    assert not np.array_equal(a.tau, c.tau)


def test_thread_count_does_not_matter(bandwidth):
    n0 = set_threads()
    try:
        set_threads(1)
        a = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 1000, 1e4, seed=9)
        set_threads(max(2, n0))
        b = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 1000, 1e4, seed=9)
    finally:
        set_threads(n0)
    np.testing.assert_array_equal(a.tau, b.tau)


def test_single_path_matches_batch(bandwidth):
    batch = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 20, 1e4, seed=11)
    for k in (0, 7, 19):
        one = simulate_first_return(bandwidth, (5.0, 0.0, "01"), 1e4, seed=11, index=k)
        assert one.tau == batch[k].tau and one.x == batch[k].x and one.phase == batch[k].phase


def test_trace_is_consistent(bandwidth):
    rec = simulate_first_return(bandwidth, (5.0, 0.0, "01"), 1e4, seed=1, trace=True)
    tr = rec.trace
    assert tr.shape[1] == len(TRACE_FIELDS)
    assert np.all(np.diff(tr[:, 0]) >= 0)
    assert np.all(tr[:, 1] >= 0) and np.all(tr[:, 2] >= -1e-12)
    # linear motion between events
    dt = np.diff(tr[:, 0])
    np.testing.assert_allclose(tr[1:, 1], tr[:-1, 1] + tr[:-1, 4] * dt, atol=1e-9)
    np.testing.assert_allclose(tr[1:, 2], tr[:-1, 2] + tr[:-1, 5] * dt, atol=1e-9)


def test_return_probability_of_transient_queue():
    # Y drifts up: leaving "u" at rate 1, leaving "d" at rate 2, so P[return] = 1 / 2
    m = on_off_model(1.0, 2.0)
    rec = simulate_first_returns(m, (0.0, 0.0, "u"), 20000, 400.0, seed=5)
    assert 1 - rec.censored_fraction == pytest.approx(0.5, abs=0.015)


def test_empirical_cdf_scaling(bandwidth):
    rec = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 3000, 1e4, seed=2)
    emp = empirical_return_cdf(rec, 4)
    assert sum(emp.total(i) for i in range(4)) == pytest.approx(1.0)
    assert emp(3, 1e9) == pytest.approx(emp.total(3))


def test_ks_distance_of_sample_with_itself(bandwidth):
    rec = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 3000, 1e4, seed=2)
    emp = empirical_return_cdf(rec, 4)
    assert ks_distance(lambda x: emp(3, x), emp, 3) == 0.0


def test_all_censored_raises(bandwidth):
    rec = simulate_first_returns(bandwidth, (5.0, 0.0, "01"), 50, 1e-6, seed=0)
    assert rec.censored_fraction == 1.0 and rec[0].x is None
    with pytest.raises(NoRetainedPaths):
        empirical_return_cdf(rec)


@pytest.mark.parametrize("init, horizon", [((-1.0, 0.0, "01"), 1.0), ((1.0, 0.0, "01"), 0.0)])
def test_bad_inputs(bandwidth, init, horizon):
    with pytest.raises(MonteCarloError):
        simulate_first_returns(bandwidth, init, 10, horizon, seed=0)


def test_stationary_atom_of_recurrent_queue():
    # leaving "u" at 2 and "d" at 1: π = (1/3, 2/3), atom at Y = 0 is π_d - π_u = 1/3
    m = on_off_model(2.0, 1.0)
    est = estimate_stationary(m, 100.0, 4e4, seed=1, n_batches=20)
    p, se = est.p_y_zero
    assert p == pytest.approx(1 / 3, abs=max(4 * se, 0.01))
    assert est.p_y_positive[0] + p == pytest.approx(1.0, abs=1e-9)


def test_stationary_bad_args(bandwidth):
    with pytest.raises(MonteCarloError):
        estimate_stationary(bandwidth, 10.0, 0.0, seed=0)
