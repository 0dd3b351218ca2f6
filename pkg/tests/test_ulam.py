import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.exceptions import NotFittedError

from driftsens import io, models
from driftsens.exceptions import ConvergenceError, DomainError, EstimationError
from driftsens.sde import Domain, PerturbationField
from driftsens.ulam import (
    UlamEstimator,
    assemble_operators,
    build_grid,
    derivative_from_launches,
    estimate_kernel,
    kernel_derivative,
    kernel_from_launches,
    launch,
    operator_norm_residual,
    spectral_norm,
)

UNIT = Domain.box([0.0], [1.0])
WELL = Domain.box([-2.0], [2.0])


def test_grid_examples():
    g = build_grid(UNIT, 4)
    assert g.cell_index([[0.25]])[0] == 1
    assert g.cell_index([[1.0]])[0] == 3
    assert g.cell_index([[0.0]])[0] == 0
    sq = build_grid(Domain.box([0.0, 0.0], [1.0, 1.0]), 4)
    assert sq.n_cells == 16
    assert sq.box_volume == pytest.approx(1 / 16)
    assert sq.cell_index([[0.6, 0.1]])[0] == 2 * 4 + 0


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        build_grid(UNIT, 1)
    with pytest.raises(DomainError):
        build_grid(Domain.unbounded(), 4)


@given(st.floats(0.0, 1.0, allow_nan=False))
def test_lookup_is_total_and_consistent(x):
    g = build_grid(UNIT, 7)
    i = g.cell_index([[x]])[0]
    assert 0 <= i < 7
    lo = g.domain.lower[0] + i * g.widths[0]
    assert lo - 1e-12 <= x <= lo + g.widths[0] + 1e-12


@pytest.fixture(scope="module")
def rbm_kernel():
    g = build_grid(UNIT, 16)
    return estimate_kernel(models.brownian(1.0), None, g, 1.0, 4000, seed=3, dt=0.05)


def test_kernel_row_mass_and_operators(rbm_kernel):
    k = rbm_kernel
    assert np.all(k.k >= 0)
    np.testing.assert_allclose(k.row_mass, 1.0, atol=1e-14)
    P, U = assemble_operators(k)
    g = k.grid
    np.testing.assert_allclose(U.apply(np.ones(g.n_cells)), 1.0, atol=1e-14)
    f = np.ones(g.n_cells)
    assert g.inner(P.apply(f), np.ones(g.n_cells)) == pytest.approx(g.inner(f, np.ones(g.n_cells)), abs=1e-14)
    rng = np.random.default_rng(0)
    for _ in range(5):
        f, h = rng.standard_normal((2, g.n_cells))
        assert abs(g.inner(P.apply(f), h) - g.inner(f, U.apply(h))) < 1e-12
    # total integral of any density is preserved
    dens = rng.random(g.n_cells)
    assert g.inner(P.apply(dens), np.ones(g.n_cells)) == pytest.approx(g.inner(dens, np.ones(g.n_cells)), rel=1e-14)


def test_reflected_bm_kernel_is_symmetric_within_noise(rbm_kernel):
    k = rbm_kernel
    n, vol = k.n_paths_per_cell, k.grid.box_volume
    se = np.sqrt((k.k + k.k.T) / (n * vol))
    z = np.abs(k.k - k.k.T) / se
    assert z.max() < 5


def test_uniform_density_is_fixed_by_reflected_bm(rbm_kernel):
    P, _ = assemble_operators(rbm_kernel)
    one = np.ones(rbm_kernel.grid.n_cells)
    # column sums of P are 1 exactly; the uniform density moves only by MC noise
    assert np.abs(P.matrix.sum(axis=0) - 1).max() < 1e-12
    assert np.abs(P.apply(one) - 1).max() < 0.1


def test_estimator_api_and_errors():
    g = build_grid(UNIT, 4)
    est = UlamEstimator(g)
    with pytest.raises(NotFittedError):
        est.transform(np.ones((1, 4)))
    starts = g.centers.repeat(2, axis=0)
    ends = np.array([[0.1], [0.9], [0.3], [0.3], [0.6], [0.6], [0.99], [0.2]])
    est.fit(starts, ends)
    np.testing.assert_allclose(est.kernel_[0], [2.0, 0, 0, 2.0])
    np.testing.assert_allclose(est.transform(np.ones((1, 4))).sum(), 4.0)
    np.testing.assert_allclose(est.koopman(np.ones((1, 4))), 1.0)
    w = np.ones(8)
    w[2:4] = 0.0
    with pytest.raises(EstimationError, match="cell 1"):
        UlamEstimator(g).fit(starts, ends, sample_weight=w)
    with pytest.raises(ValueError):
        UlamEstimator(g).fit(starts, ends[:3])
    assert UlamEstimator(g, normalize=False).get_params()["normalize"] is False


def test_zero_direction_derivative():
    g = build_grid(WELL, 8)
    dk = kernel_derivative(models.double_well(), PerturbationField.zero(), g, 0.5, 200, seed=1)
    assert not dk.dk.any()


@pytest.fixture(scope="module")
def well_launches():
    g = build_grid(WELL, 8)
    gamma = models.gaussian_bump(1.0, 0.5, 0.5)
    return launch(models.double_well(0.7), g, 0.5, 20_000, seed=61, direction=gamma), gamma


def test_derivative_row_mass(well_launches):
    L, _ = well_launches
    raw = derivative_from_launches(L, centered=False)
    z = np.abs(raw.row_mass) / raw.row_mass_se
    assert z.max() < 4
    centered = derivative_from_launches(L, centered=True)
    np.testing.assert_allclose(centered.row_mass, 0.0, atol=1e-12)


def test_derivative_matches_coupled_finite_difference(well_launches):
    L, gamma = well_launches
    m = models.double_well(0.7)
    g = L.grid
    eps = 0.05
    plus = launch(m, g, 0.5, 20_000, seed=61, gamma=gamma.scaled(eps))
    minus = launch(m, g, 0.5, 20_000, seed=61, gamma=gamma.scaled(-eps))
    n, nc, vol = L.n_paths_per_cell, g.n_cells, g.box_volume
    rows = g.cell_index(L.starts)
    cp, cm = g.cell_index(plus.endpoints), g.cell_index(minus.endpoints)
    samples = ((cp[:, None] == np.arange(nc)) * 1.0 - (cm[:, None] == np.arange(nc))) / (2 * eps * vol)
    fd = np.zeros((nc, nc))
    fd_se = np.zeros((nc, nc))
    for i in range(nc):
        s = samples[rows == i]
        fd[i] = s.mean(axis=0)
        fd_se[i] = s.std(axis=0, ddof=1) / np.sqrt(n)
    dk = derivative_from_launches(L, centered=False)
    se = np.hypot(dk.dk_se, fd_se)
    mask = se > 0
    z = np.abs(dk.dk - fd)[mask] / se[mask]
    assert z.max() < 4
    assert np.mean(z > 3) < 0.05


def test_constant_drift_derivative_moves_mass_forward():
    g = build_grid(Domain.box([-3.0], [3.0]), 12)
    dk = kernel_derivative(models.constant_drift(0.0, 1.0), PerturbationField.constant(1.0), g,
                           0.5, 5000, seed=2)
    shift = (dk.dk * g.centers[:, 0][None, :]).sum(axis=1) * g.box_volume
    assert np.all(shift > 0)


def test_reweighted_kernel_matches_direct_simulation():
    g = build_grid(WELL, 10)
    m = models.double_well(0.7)
    gamma = models.gaussian_bump(0.3, 0.5, 0.5)
    sim = estimate_kernel(m, gamma, g, 0.5, 10_000, seed=5)
    rw = estimate_kernel(m, gamma, g, 0.5, 10_000, seed=6, method="reweight")
    np.testing.assert_allclose(rw.row_mass, 1.0, atol=1e-12)
    var = (sim.k + rw.k) / (10_000 * g.box_volume)
    mask = var > 0
    z = np.abs(sim.k - rw.k)[mask] / np.sqrt(var[mask])
    assert z.max() < 5
    with pytest.raises(ValueError):
        estimate_kernel(m, gamma, g, 0.5, 10, seed=6, method="magic")
    with pytest.raises(ValueError):
        estimate_kernel(m, gamma, g, 50.0, 10, seed=6)


def test_kernel_determinism():
    g = build_grid(WELL, 6)
    m = models.double_well(0.7)
    a = estimate_kernel(m, None, g, 0.3, 500, seed=9)
    b = estimate_kernel(m, None, g, 0.3, 500, seed=9, n_jobs=3)
    assert a.k.tobytes() == b.k.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 10_000))
def test_spectral_norm_matches_svd(n, m, seed):
    A = np.random.default_rng(seed).standard_normal((n, m))
    s = np.linalg.svd(A, compute_uv=False)
    if len(s) > 1 and s[1] > 0.999 * s[0]:
        return
    assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)


def test_spectral_norm_edge_cases():
    assert spectral_norm(np.zeros((3, 3))) == 0.0
    with pytest.raises(ConvergenceError):
        spectral_norm(np.diag([2.0, 1.9]), max_iter=2, tol=0.0)


def test_operator_norm_residual_basics():
    A = np.eye(3)
    assert operator_norm_residual(A, A, np.zeros((3, 3)), 0.0) == 0.0
    assert operator_norm_residual(A, 2 * A, np.zeros((3, 3)), 0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        operator_norm_residual(A, np.eye(4), np.zeros((3, 3)), 1.0)


def test_residual_ratio_shrinks_with_epsilon(well_launches):
    L, _ = well_launches
    P0 = assemble_operators(kernel_from_launches(L))[0]
    DP = derivative_from_launches(L).operator().matrix
    ratios = [operator_norm_residual(P0, assemble_operators(kernel_from_launches(L, e))[0],
                                     e * DP, e) for e in (0.4, 0.2, 0.1)]
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 0.5 * ratios[0]


def test_matrix_csv_round_trip(tmp_path, rbm_kernel):
    P, _ = assemble_operators(rbm_kernel)
    path = tmp_path / "P.csv"
    io.write_matrix(path, P.matrix, P.t, P.gamma_id)
    data, meta = io.read_matrix(path)
    assert data.tobytes() == P.matrix.tobytes()
    assert meta == {"n_cells": 16, "t": 1.0, "gamma_id": "zero"}
