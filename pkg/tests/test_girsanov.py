import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftsens import models
from driftsens.exceptions import WeightOverflowError
from driftsens.girsanov import (
    GirsanovSeries,
    exponential_martingale,
    girsanov_series,
    ito_weight,
    quadratic_variation,
    reweighted_expectation,
)
from driftsens.observables import mc_estimate, position
from driftsens.sde import Domain, PerturbationField, TimeGrid, simulate_ensemble, simulate_path

FREE = Domain.unbounded()


@pytest.fixture(scope="module")
def bm_ensemble():
    return simulate_ensemble(models.brownian(), FREE, [0.0], None, TimeGrid(1.0, 50), 100_000, seed=21)


def test_zero_direction_gives_trivial_series(bm_ensemble):
    s = girsanov_series(bm_ensemble.path(0), PerturbationField.zero(), models.brownian())
    assert not s.m.any() and not s.qv.any()
    np.testing.assert_array_equal(s.z, 1.0)


def test_constant_direction_telescopes():
    m = models.brownian()
    p = simulate_path(m, FREE, [0.2], None, TimeGrid(1.0, 100), seed=2)
    mt = ito_weight(p, PerturbationField.constant(0.7), m)
    assert mt[-1] == pytest.approx(0.7 * (p.states[-1, 0] - p.states[0, 0]), abs=1e-12)


def test_time_linear_direction_resummation():
    m = models.brownian()
    grid = TimeGrid(1.0, 64)
    p = simulate_path(m, FREE, [0.0], None, grid, seed=3)
    mt = ito_weight(p, models.time_linear(1.0), m)
    oracle = np.sum(grid.times[:-1] * p.increments[:, 0])
    assert mt[-1] == pytest.approx(oracle, abs=1e-12)


def test_quadratic_variation_examples():
    grid = TimeGrid(1.0, 10)
    p = simulate_path(models.brownian(), FREE, [0.0], None, grid, seed=1)
    assert quadratic_variation(p, PerturbationField.constant(0.3), models.brownian())[-1] == pytest.approx(0.09)
    m2 = models.brownian(sigma=2.0)
    p2 = simulate_path(m2, FREE, [0.0], None, grid, seed=1)
    assert quadratic_variation(p2, PerturbationField.constant(1.0), m2)[-1] == pytest.approx(0.25)
    assert not quadratic_variation(p, PerturbationField.zero(), models.brownian()).any()


def test_pathwise_identity_and_monotone_qv(bm_ensemble):
    s = girsanov_series(bm_ensemble, models.gaussian_bump(0.8, 0.0, 0.5), models.brownian())
    np.testing.assert_array_equal(s.z, np.exp(s.m - 0.5 * s.qv))
    assert np.all(np.diff(s.qv, axis=1) >= 0)
    assert np.all(s.m[:, 0] == 0) and np.all(s.z[:, 0] == 1)


@pytest.mark.parametrize("c", [0.25, 0.5, 1.0])
def test_mean_of_z_is_one(bm_ensemble, c):
    z = exponential_martingale(bm_ensemble, PerturbationField.constant(c), models.brownian())[:, -1]
    assert abs(mc_estimate(z).z_score(1.0)) < 4


def test_second_moment_stable_under_doubling():
    grid = TimeGrid(1.0, 20)
    gamma = PerturbationField.constant(0.5)
    z2 = []
    for n in (50_000, 100_000):
        ens = simulate_ensemble(models.brownian(), FREE, [0.0], None, grid, n, seed=8)
        z2.append(np.mean(exponential_martingale(ens, gamma, models.brownian())[:, -1] ** 2))
    # E[Z^2] = exp(c^2 T) = 1.284
    assert np.isfinite(z2).all()
    assert abs(z2[1] - z2[0]) / z2[1] < 0.02
    assert z2[1] == pytest.approx(np.exp(0.25), rel=0.03)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3, allow_nan=False))
def test_linearity_in_direction(a):
    m = models.double_well()
    box = Domain.box([-2.0], [2.0])
    ens = simulate_ensemble(m, box, [0.0], None, TimeGrid(0.5, 20), 50, seed=4)
    gamma = models.gaussian_bump(1.0, 0.3, 0.4)
    base = girsanov_series(ens, gamma, m)
    scaled = girsanov_series(ens, gamma.scaled(a), m)
    np.testing.assert_allclose(scaled.m, a * base.m, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(scaled.qv, a * a * base.qv, rtol=1e-12, atol=1e-14)
    via = base.scaled(a)
    np.testing.assert_allclose(via.z, scaled.z, rtol=1e-12)


def test_quadratic_variation_bound():
    m = models.double_well(0.7)
    ens = simulate_ensemble(m, Domain.box([-2.0], [2.0]), [0.0], None, TimeGrid(1.0, 100), 2000, seed=5)
    gamma = models.gaussian_bump(0.6, 0.5, 0.5)
    qv = girsanov_series(ens, gamma, m).qv
    bound = m.ellipticity_bound**2 * 0.6**2 * ens.grid.times
    assert np.all(qv <= bound[None, :] * (1 + 1e-12))


def test_reweighting_zero_direction_is_plain_mean(bm_ensemble):
    obs = position(1.0, 1e6)
    est = reweighted_expectation(bm_ensemble, PerturbationField.zero(), models.brownian(), obs)
    assert est.mean == pytest.approx(bm_ensemble.endpoints().mean(), abs=1e-15)


def test_reweighting_constant_direction(bm_ensemble):
    est = reweighted_expectation(bm_ensemble, PerturbationField.constant(0.3), models.brownian(),
                                 position(1.0, 1e6))
    assert abs(est.z_score(0.3)) < 3


def test_reweighting_matches_direct_simulation_with_reflection():
    # Reflected, nonlinear drift: the reweighted base ensemble and a direct
    # perturbed simulation estimate the same expectation.
    m = models.double_well(0.7)
    box = Domain.box([-2.0], [2.0])
    grid = TimeGrid(1.0, 100)
    gamma = models.gaussian_bump(0.8, -1.0, 0.5)
    obs = position(1.0, 2.0)
    base = simulate_ensemble(m, box, [-1.5], None, grid, 60_000, seed=31)
    pert = simulate_ensemble(m, box, [-1.5], gamma, grid, 60_000, seed=32)
    rw = reweighted_expectation(base, gamma, m, obs)
    direct = mc_estimate(obs.evaluate(pert))
    z = (rw.mean - direct.mean) / np.hypot(rw.std_error, direct.std_error)
    assert abs(z) < 3


def test_reweighting_is_exact_for_single_step():
    # One Euler step is a Gaussian shift: E[g Z] equals the perturbed scheme
    # exactly, so with g(x) = x the weighted mean hits x0 + (b + c) dt.
    m = models.constant_drift(0.3, 1.0)
    grid = TimeGrid(0.5, 1)
    ens = simulate_ensemble(m, FREE, [0.0], None, grid, 200_000, seed=1)
    est = reweighted_expectation(ens, PerturbationField.constant(0.4), m, position(0.5, 1e6))
    assert abs(est.z_score(0.35)) < 4


def test_weight_overflow_reports_values():
    s = GirsanovSeries(np.array([0.0, 800.0]), np.array([0.0, 1.0]), np.ones(2))
    with pytest.raises(WeightOverflowError, match="M = 800"):
        s.scaled(1.0)
