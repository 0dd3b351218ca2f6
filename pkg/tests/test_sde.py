import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftsens import models
from driftsens.exceptions import DomainError, ExplosionError, IllConditionedDiffusionError
from driftsens.sde import (
    Domain,
    PerturbationField,
    SdeModel,
    TimeGrid,
    estimate_v_norm,
    reflect_into_domain,
    simulate_ensemble,
    simulate_path,
    validate_model,
)

UNIT = Domain.box([0.0], [1.0])
FREE = Domain.unbounded()


def test_zero_step_grid_returns_start():
    path = simulate_path(models.brownian(), FREE, [0.3], None, TimeGrid(0.0, 0), seed=1)
    assert path.states.shape == (1, 1)
    assert path.states[0, 0] == 0.3


def test_mean_with_constant_drift():
    ens = simulate_ensemble(models.constant_drift(1.0, 1.0), FREE, [0.0], None,
                            TimeGrid(1.0, 100), 100_000, seed=5)
    assert abs(ens.endpoints().mean() - 1.0) < 0.01


def test_variance_of_brownian_endpoint():
    ens = simulate_ensemble(models.brownian(), FREE, [0.0], None, TimeGrid(1.0, 50), 100_000, seed=6)
    assert abs(ens.endpoints().var(ddof=1) - 1.0) < 0.02


def test_box_paths_stay_inside():
    ens = simulate_ensemble(models.brownian(), UNIT, [0.5], None, TimeGrid(1.0, 100), 2000, seed=7)
    assert ens.paths.min() >= 0.0 and ens.paths.max() <= 1.0
    np.testing.assert_array_equal(ens.paths[:, 0, 0], 0.5)


@pytest.mark.parametrize("x,expected", [(0.5, 0.5), (1.2, 0.8), (2.5, 0.5), (-0.3, 0.3), (-1.25, 0.75)])
def test_reflection_examples(x, expected):
    assert reflect_into_domain(np.array([x]), UNIT)[0] == pytest.approx(expected, abs=1e-15)


def test_reflection_identity_on_unbounded():
    p = np.array([3.0, -7.0])
    np.testing.assert_array_equal(reflect_into_domain(p, Domain.unbounded()), p)


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=2))
def test_reflection_idempotent_and_inside(p):
    box = Domain.box([-1.0, 0.0], [2.0, 0.5])
    once = reflect_into_domain(np.array(p), box)
    assert box.contains(once)
    np.testing.assert_array_equal(reflect_into_domain(once, box), once)


def test_single_path_matches_ensemble_row():
    m, grid = models.double_well(), TimeGrid(1.0, 100)
    ens = simulate_ensemble(m, Domain.box([-2.0], [2.0]), [0.0], None, grid, 10, seed=11)
    for i in (0, 5):
        p = simulate_path(m, Domain.box([-2.0], [2.0]), [0.0], None, grid, seed=11, path_index=i)
        np.testing.assert_array_equal(p.states, ens.paths[i])
        np.testing.assert_array_equal(p.increments, ens.increments[i])


def test_determinism_across_calls_and_threads():
    m, grid = models.ornstein_uhlenbeck(), TimeGrid(1.0, 20)
    a = simulate_ensemble(m, FREE, [0.0], None, grid, 20_000, seed=3)
    b = simulate_ensemble(m, FREE, [0.0], None, grid, 20_000, seed=3)
    c = simulate_ensemble(m, FREE, [0.0], None, grid, 20_000, seed=3, n_jobs=4)
    assert a.paths.tobytes() == b.paths.tobytes() == c.paths.tobytes()


def test_path_offset_selects_streams():
    m, grid = models.brownian(), TimeGrid(1.0, 10)
    full = simulate_ensemble(m, FREE, [0.0], None, grid, 10, seed=3)
    tail = simulate_ensemble(m, FREE, [0.0], None, grid, 4, seed=3, path_offset=6)
    np.testing.assert_array_equal(full.paths[6:], tail.paths)


def test_injected_zero_increments_keep_path_constant():
    m = SdeModel(lambda t, y: 0.0, np.eye(1), horizon=1.0)
    p = simulate_path(m, FREE, [0.7], None, TimeGrid(1.0, 10), seed=0, increments=np.zeros((10, 1)))
    np.testing.assert_array_equal(p.states, 0.7)


def test_weak_order_constant_coefficients():
    gamma = PerturbationField.constant(0.5)
    m = models.constant_drift(0.25, 0.8)
    ens = simulate_ensemble(m, FREE, [1.0], gamma, TimeGrid(2.0, 40), 50_000, seed=4)
    x = ens.endpoints()[:, 0]
    n = x.size
    assert abs(x.mean() - (1.0 + 0.75 * 2.0)) < 3 * x.std() / np.sqrt(n)
    var_se = x.var() * np.sqrt(2.0 / (n - 1))
    assert abs(x.var(ddof=1) - 0.64 * 2.0) < 3 * var_se


def test_start_outside_domain():
    with pytest.raises(DomainError):
        simulate_path(models.brownian(), UNIT, [1.5], None, TimeGrid(1.0, 10), seed=0)


def test_horizon_check():
    with pytest.raises(ValueError):
        simulate_path(models.brownian(horizon=1.0), FREE, [0.0], None, TimeGrid(2.0, 10), seed=0)


def test_explosion_names_step_and_path():
    m = SdeModel(lambda t, y: y**3, np.eye(1), horizon=10.0)
    with pytest.raises(ExplosionError) as info:
        simulate_ensemble(m, FREE, [5.0], None, TimeGrid(1.0, 100), 3, seed=0)
    assert info.value.step >= 1
    assert info.value.path_index in (0, 1, 2)


def test_ill_conditioned_diffusion():
    with pytest.raises(IllConditionedDiffusionError):
        SdeModel(lambda t, y: 0.0, np.diag([1.0, 1e-5]), horizon=1.0, dimension=2)


def test_v_norm_examples():
    assert estimate_v_norm(PerturbationField.zero(), UNIT) == 0.0
    assert estimate_v_norm(PerturbationField.constant(-0.7), UNIT) == pytest.approx(0.7)
    sine = PerturbationField(lambda t, y: np.sin(y), "sin")
    est = estimate_v_norm(sine, Domain.box([0.0], [np.pi]), resolution=10_000)
    assert abs(est - 1.0) <= 1e-3


def test_v_norm_is_lower_bound_of_bump_norm():
    bump = models.gaussian_bump(1.0, 0.0, 0.3)
    est = estimate_v_norm(bump, Domain.box([-2.0], [2.0]), resolution=4000)
    assert est <= bump.v_norm_estimate + 1e-12
    assert est == pytest.approx(bump.v_norm_estimate, rel=1e-3)


def test_v_norm_needs_box():
    with pytest.raises(DomainError):
        estimate_v_norm(PerturbationField.constant(1.0), FREE)


def test_validate_model_examples():
    rep = validate_model(models.brownian(1.0), UNIT)
    assert rep.min_singular_value == pytest.approx(1.0)
    assert rep.drift_growth_ratio == 0.0
    assert rep.ok

    ou = models.ornstein_uhlenbeck(1.0, 0.0, 1.0)
    rep = validate_model(ou, Domain.box([-2.0], [2.0]), resolution=101)
    assert rep.lipschitz_quotient == pytest.approx(1.0, abs=1e-9)

    small = SdeModel(lambda t, y: 0.0, np.array([[0.5]]), horizon=1.0, ellipticity_bound=1.0)
    rep = validate_model(small, UNIT)
    assert not rep.ok
    assert any(v.startswith("A3") for v in rep.violations)


def test_domain_validation():
    with pytest.raises(DomainError):
        Domain.box([1.0], [0.0])
    with pytest.raises(DomainError):
        Domain("sphere")
