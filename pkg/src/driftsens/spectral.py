"""Eigen- and singular-value decompositions of Ulam operators and their
first-order response to drift perturbations, plus time-periodic stationary
families and their ergodic averages.

Inner products are volume weighted, ``<f, g> = vol * sum(f * g)`` (bilinear,
no conjugation), matching L2 of Lebesgue measure on a uniform grid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .exceptions import ConvergenceError, DegenerateEigenvalueError, DegenerateEigenvalueWarning
from .sde import TimeGrid, simulate_ensemble
from .ulam import assemble_operators, estimate_kernel

DENSE_LIMIT = 512
RESIDUAL_TOL = 1e-8
GAP_TOL = 1e-6


def _unpack(op):
    if hasattr(op, "matrix"):
        vol = op.grid.box_volume if op.grid is not None else 1.0
        return np.asarray(op.matrix), vol
    return np.asarray(op, dtype=float), 1.0


def _orient(v):
    """Rotate so the largest-magnitude entry is real and positive."""
    k = int(np.argmax(np.abs(v)))
    return v * (np.conj(v[k]) / abs(v[k])) if v[k] != 0 else v


def _real_if_close(v):
    return np.real(v) if np.all(np.abs(np.imag(v)) <= 1e-12 * max(1.0, np.max(np.abs(v)))) else v


@dataclass(eq=False)
class EigenPair:
    """A right/left eigenpair with ``||r||_L2 = 1`` and ``<l, r> = 1``."""

    value: complex
    right_vector: np.ndarray
    left_vector: np.ndarray
    gap: float
    residual: float
    index: int
    volume: float = 1.0
    degenerate: bool = False


@dataclass(eq=False)
class SpectralResponse:
    dvalue: complex
    dvector: np.ndarray
    conditioning: float


def eigenpairs(operator, k):
    """Leading ``k`` eigenpairs sorted by |value| descending.

    Dense LAPACK decomposition up to 512 cells, ARPACK above. Pairs closer
    than ``1e-6 * ||A||`` to another eigenvalue are marked degenerate and a
    DegenerateEigenvalueWarning is issued.
    """
    A, vol = _unpack(operator)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    if n <= DENSE_LIMIT:
        w, vl, vr = scipy.linalg.eig(A, left=True, right=True)
        lefts = np.conj(vl)
        norm_a = np.linalg.norm(A, 2)
        all_values = w
    else:
        w, vr = scipy.sparse.linalg.eigs(A, k=min(k + 2, n - 2), which="LM")
        wl, ul = scipy.sparse.linalg.eigs(A.T, k=min(k + 2, n - 2), which="LM")
        lefts = ul[:, [int(np.argmin(np.abs(wl - x))) for x in w]]
        norm_a = np.linalg.norm(A, "fro")
        all_values = w
    order = np.argsort(-np.abs(w), kind="stable")
    pairs = []
    for rank, i in enumerate(order[:k]):
        lam = w[i]
        r = _orient(vr[:, i] / np.sqrt(vol * np.sum(np.abs(vr[:, i]) ** 2)))
        l = lefts[:, i]
        residual = float(np.linalg.norm(A @ r - lam * r))
        if residual > RESIDUAL_TOL * max(norm_a, 1.0):
            raise ConvergenceError(f"eigenpair {rank} residual {residual:.3g} too large")
        l = l / (vol * np.sum(l * r))
        others = np.delete(all_values, i)
        gap = float(np.min(np.abs(others - lam))) if others.size else np.inf
        degenerate = gap < GAP_TOL * norm_a
        if degenerate:
            warnings.warn(f"eigenvalue {rank} ({lam:.6g}) has gap {gap:.3g}",
                          DegenerateEigenvalueWarning, stacklevel=2)
        pairs.append(EigenPair(complex(lam), _real_if_close(r), _real_if_close(l), gap, residual,
                               rank, vol, degenerate))
    return pairs


def eigenvalue_response(P0, DP, pair):
    """First-order change of a simple eigenpair of ``P0`` along ``DP``.

    ``dvalue = l^T DP r / l^T r`` and ``dvector`` solves
    ``(lambda - P0) dr = (DP - dvalue) r`` in the least-squares sense,
    projected so that ``<l, dr> = 0``.
    """
    if pair.degenerate:
        raise DegenerateEigenvalueError(
            f"eigenvalue {pair.value:.6g} is not simple (gap {pair.gap:.3g})"
        )
    A, _ = _unpack(P0)
    D, _ = _unpack(DP)
    r, l = pair.right_vector, pair.left_vector
    lam = pair.value
    if not np.any(D):
        return SpectralResponse(0.0, np.zeros_like(r), 1.0 / pair.gap)
    dlam = (l @ D @ r) / (l @ r)
    rhs = D @ r - dlam * r
    lhs = lam * np.eye(A.shape[0]) - A
    dr = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    dr = dr - ((l @ dr) / (l @ r)) * r
    dlam = dlam.real if abs(np.imag(dlam)) <= 1e-14 else complex(dlam)
    return SpectralResponse(dlam, _real_if_close(dr), 1.0 / pair.gap)


@dataclass(eq=False)
class SingularTriplet:
    value: float
    left_vector: np.ndarray
    right_vector: np.ndarray
    index: int


def singular_triplets(operator, k):
    """Leading ``k`` singular triplets, vectors with unit L2 norm.

    On a uniform grid the volume weight is the same on both sides, so the
    singular values are those of the plain matrix.
    """
    A, vol = _unpack(operator)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    u, s, vt = scipy.linalg.svd(A)
    out = []
    for i in range(k):
        ui, vi = u[:, i], vt[i]
        kmax = int(np.argmax(np.abs(vi)))
        sign = 1.0 if vi[kmax] >= 0 else -1.0
        out.append(SingularTriplet(float(s[i]), sign * ui / np.sqrt(vol), sign * vi / np.sqrt(vol), i))
    return out


def singular_value_response(P0, DP, triplet):
    """d sigma = <u, DP v> for a simple singular value."""
    D, vol = _unpack(DP)
    return float(vol * triplet.left_vector @ D @ triplet.right_vector)


@dataclass(eq=False)
class PeriodicFamily:
    """Stationary densities ``f_s`` at phases ``s_k = k * period / n``."""

    phases: np.ndarray
    densities: np.ndarray
    period: float
    period_eigenvalues: np.ndarray
    consistency: float
    grid: object
    operators: list = field(default_factory=list)

    @property
    def flagged(self):
        return bool(np.any(np.abs(self.period_eigenvalues - 1.0) > 1e-3))


def _phase_seed(seed, k):
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1, np.uint64)[0])


def period_operator(operators, start):
    """One-period product starting at phase index ``start``; later steps multiply on the left."""
    n = len(operators)
    out = np.eye(operators[0].shape[0])
    for j in range(n):
        out = operators[(start + j) % n] @ out
    return out


def periodic_stationary_family(model, gamma, grid, n_phase_samples, n_paths_per_cell, seed,
                               dt=0.01, period=None, method="simulate", n_jobs=1):
    """Fixed points of the one-period Ulam operator at each phase.

    The phase step equals the kernel time step. ``method`` is passed to
    ``estimate_kernel``; "reweight" keeps the family smooth in ``gamma``. ``consistency`` is the
    largest L1 distance between ``f_{s_{k+1}}`` and ``P_k f_{s_k}``.
    """
    period = model.period if period is None else float(period)
    if period is None or not period > 0:
        raise ValueError("model has no period")
    n = int(n_phase_samples)
    h = period / n
    if h < dt * (1 - 1e-9):
        raise ValueError("phase step is shorter than dt")
    phases = np.arange(n) * h
    ops = []
    for k, s in enumerate(phases):
        ker = estimate_kernel(model, gamma, grid, h, n_paths_per_cell, _phase_seed(seed, k),
                              dt=dt, t0=float(s), method=method, n_jobs=n_jobs)
        ops.append(assemble_operators(ker)[0].matrix)
    vol = grid.box_volume
    dens, lams = [], []
    for k in range(n):
        pair = eigenpairs(period_operator(ops, k), 1)[0]
        f = np.real(pair.right_vector)
        f = f / (vol * f.sum())
        dens.append(f)
        lams.append(pair.value)
    dens = np.array(dens)
    consistency = max(vol * np.abs(dens[(k + 1) % n] - ops[k] @ dens[k]).sum() for k in range(n))
    return PeriodicFamily(phases, dens, period, np.array(lams), float(consistency), grid, ops)


def ergodic_average(g, family):
    """(1/T) int_0^T int g(s, y) f_s(y) dy ds.

    Trapezoid in phase over the closed loop (equal weights, since f_T = f_0)
    and midpoint rule in space.
    """
    centers = family.grid.centers
    vol = family.grid.box_volume
    vals = [vol * np.sum(np.asarray(g(s, centers), dtype=float).reshape(-1) * f)
            for s, f in zip(family.phases, family.densities)]
    return float(np.mean(vals))


def birkhoff_average(g, model, domain, x0, n_periods, seed, period=None, dt=0.01,
                     n_trajectories=1, n_jobs=1):
    """Time average of ``g(s mod T, X_s)`` over ``n_periods`` periods.

    Averages over ``n_trajectories`` independent trajectories to shrink the
    Monte Carlo error; the left-point rule is used in time.
    """
    period = model.period if period is None else float(period)
    grid = TimeGrid.from_dt(n_periods * period, dt)
    ens = simulate_ensemble(model, domain, x0, None, grid, n_trajectories, seed, n_jobs)
    times = grid.times[:-1]
    total = 0.0
    for k, s in enumerate(times):
        total += np.mean(np.asarray(g(s % period, ens.paths[:, k, :]), dtype=float))
    return float(total / times.size)


def push_density(model, grid, density, t, n_particles, seed, t0=0.0, dt=0.01, n_jobs=1):
    """Push a cell density forward by direct particle simulation and histogram it.

    Particles are drawn from the piecewise-constant density (uniform inside
    cells), so the result is independent of the Ulam launch-point scheme.
    """
    rng = np.random.default_rng(seed)
    vol = grid.box_volume
    p = np.clip(np.asarray(density, float) * vol, 0, None)
    p /= p.sum()
    cells = rng.choice(grid.n_cells, size=n_particles, p=p)
    x0s = grid.centers[cells] + (rng.random((n_particles, grid.dimension)) - 0.5) * grid.widths
    x0s = grid.domain.reflect(x0s)
    tg = TimeGrid.from_dt(t0 + t, dt, t0)
    ens = simulate_ensemble(model, grid.domain, x0s, None, tg, n_particles, seed, n_jobs)
    idx = grid.cell_index(ens.endpoints())
    return np.bincount(idx, minlength=grid.n_cells) / (n_particles * vol)
