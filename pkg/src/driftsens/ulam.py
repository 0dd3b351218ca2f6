"""Ulam discretisation of transfer operators on a box grid.

Row ``i`` of a kernel matrix is a histogram of time-``t`` endpoints of paths
launched from the centre of cell ``i``, divided by the cell volume, so it
approximates ``k_t(x_i, y)`` as a density in ``y``. The Perron-Frobenius
matrix is ``P[j, i] = k[i, j] * vol`` and the Koopman matrix is its transpose;
on uniform grids the transpose is the L2(Lebesgue) adjoint.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConvergenceError, DomainError, EstimationError
from .girsanov import girsanov_series
from .sde import TimeGrid, simulate_ensemble

_BLOCK_PATHS = 40_000


@dataclass(frozen=True, eq=False)
class UlamGrid:
    """Uniform partition of a box into ``boxes_per_axis ** d`` cells.

    Cells are half-open ``[a, b)`` except the last along each axis, which is
    closed; flat indices are row-major over the axes.
    """

    domain: object
    boxes_per_axis: int

    def __post_init__(self):
        if not self.domain.is_box:
            raise DomainError("Ulam grids need a box domain")
        if int(self.boxes_per_axis) < 2:
            raise ValueError("boxes_per_axis must be >= 2")

    @property
    def dimension(self):
        return self.domain.dimension

    @property
    def n_cells(self):
        return int(self.boxes_per_axis) ** self.dimension

    @property
    def widths(self):
        return (self.domain.upper - self.domain.lower) / self.boxes_per_axis

    @property
    def box_volume(self):
        return float(np.prod(self.widths))

    @property
    def axes(self):
        """Cell-centre coordinates along each axis."""
        return [lo + (np.arange(self.boxes_per_axis) + 0.5) * w
                for lo, w in zip(self.domain.lower, self.widths)]

    @property
    def centers(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_index(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.boxes_per_axis
        idx = np.floor((points - self.domain.lower) / self.widths).astype(np.int64)
        idx = np.clip(idx, 0, n - 1)
        flat = np.zeros(points.shape[0], dtype=np.int64)
        for a in range(self.dimension):
            flat = flat * n + idx[:, a]
        return flat

    def inner(self, f, g):
        """L2(Lebesgue) inner product of two cell-value vectors."""
        return self.box_volume * np.sum(np.asarray(f) * np.asarray(g))

    def norm(self, f):
        return float(np.sqrt(self.box_volume * np.sum(np.abs(np.asarray(f)) ** 2)))


def build_grid(domain, boxes_per_axis):
    return UlamGrid(domain, int(boxes_per_axis))


class UlamEstimator(TransformerMixin, BaseEstimator):
    """Histogram estimator of a transition kernel from (start, end) samples.

    Parameters
    ----------
    grid : UlamGrid
    normalize : bool, default=True
        Divide each row by its total sample weight, which makes every row
        integrate to exactly one. With ``normalize=False`` rows are divided by
        their sample count instead, so signed weights give an unbiased
        estimate of ``E[1{X_t in cell j} w]``.

    Attributes
    ----------
    kernel_ : ndarray of shape (n_cells, n_cells)
    transfer_matrix_ : ndarray of shape (n_cells, n_cells)
        Perron-Frobenius matrix acting on column vectors of cell values.
    row_counts_ : ndarray of shape (n_cells,)
    """

    def __init__(self, grid, normalize=True):
        self.grid = grid
        self.normalize = normalize

    def fit(self, X, y, sample_weight=None):
        X = check_array(X)
        y = check_array(y)
        if X.shape != y.shape:
            raise ValueError("start and end samples must have the same shape")
        n_cells = self.grid.n_cells
        rows = self.grid.cell_index(X)
        cols = self.grid.cell_index(y)
        w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, float)
        flat = rows * n_cells + cols
        mass = np.bincount(flat, weights=w, minlength=n_cells * n_cells).reshape(n_cells, n_cells)
        counts = np.bincount(rows, minlength=n_cells).astype(float)
        if self.normalize:
            norm = mass.sum(axis=1)
        else:
            norm = counts
        empty = (counts > 0) & (norm == 0)
        if empty.any():
            raise EstimationError(f"cell {int(np.flatnonzero(empty)[0])} has zero total weight")
        with np.errstate(invalid="ignore", divide="ignore"):
            kernel = np.where(counts[:, None] > 0, mass / norm[:, None], 0.0)
        self.kernel_ = kernel / self.grid.box_volume
        self.transfer_matrix_ = (kernel).T.copy()
        self.row_counts_ = counts
        return self

    def transform(self, X):
        """Push densities (rows of cell values) forward one step."""
        check_is_fitted(self, "kernel_")
        X = check_array(X)
        return X @ self.transfer_matrix_.T

    def koopman(self, X):
        """Pull observables (rows of cell values) back one step."""
        check_is_fitted(self, "kernel_")
        X = check_array(X)
        return X @ self.transfer_matrix_


@dataclass(eq=False)
class KernelMatrix:
    k: np.ndarray
    t: float
    gamma_id: str
    n_paths_per_cell: int
    grid: UlamGrid

    @property
    def row_mass(self):
        return self.k.sum(axis=1) * self.grid.box_volume

    @property
    def max_entry(self):
        return float(self.k.max())


@dataclass(eq=False)
class DKernelMatrix:
    dk: np.ndarray
    t: float
    direction_id: str
    n_paths_per_cell: int
    grid: UlamGrid
    dk_se: Optional[np.ndarray] = None
    row_mass_se: Optional[np.ndarray] = None

    @property
    def row_mass(self):
        return self.dk.sum(axis=1) * self.grid.box_volume

    def operator(self):
        return UlamOperator(self.dk.T * self.grid.box_volume, "perron_frobenius_derivative",
                            self.t, self.direction_id, self.grid)


@dataclass(eq=False)
class UlamOperator:
    matrix: np.ndarray
    kind: str
    t: float
    gamma_id: str
    grid: Optional[UlamGrid] = None

    def apply(self, f):
        return self.matrix @ np.asarray(f)


@dataclass(eq=False)
class LaunchEnsemble:
    """Endpoints of paths launched from every cell centre.

    When a ``direction`` was given, ``m`` and ``qv`` hold the Girsanov weight
    and its quadratic variation at time ``t`` for each path.
    """

    grid: UlamGrid
    t: float
    n_paths_per_cell: int
    starts: np.ndarray
    endpoints: np.ndarray
    gamma_id: str
    direction_id: Optional[str] = None
    m: Optional[np.ndarray] = None
    qv: Optional[np.ndarray] = None

    def weights(self, eps):
        """Girsanov density Z at time t for ``eps * direction``."""
        if self.m is None:
            raise ValueError("launches were simulated without a direction")
        return np.exp(eps * self.m - 0.5 * eps**2 * self.qv)


def launch(model, grid, t, n_paths_per_cell, seed, gamma=None, direction=None,
           dt=0.01, t0=0.0, n_jobs=1):
    """Simulate ``n_paths_per_cell`` paths from each cell centre up to ``t0 + t``.

    Path ``p`` of cell ``i`` uses stream ``(seed, i * n_paths_per_cell + p)``,
    so rows are reproducible independently of blocking.
    """
    tgrid = TimeGrid.from_dt(t0 + t, dt, t0)
    centers = grid.centers
    n = int(n_paths_per_cell)
    cells_per_block = max(1, _BLOCK_PATHS // n)
    starts, ends, ms, qvs = [], [], [], []
    for first in range(0, grid.n_cells, cells_per_block):
        last = min(first + cells_per_block, grid.n_cells)
        x0s = np.repeat(centers[first:last], n, axis=0)
        ens = simulate_ensemble(model, grid.domain, x0s, gamma, tgrid, x0s.shape[0], seed,
                                n_jobs=n_jobs, path_offset=first * n)
        starts.append(x0s)
        ends.append(ens.endpoints())
        if direction is not None:
            s = girsanov_series(ens, direction, model)
            ms.append(s.m[:, -1])
            qvs.append(s.qv[:, -1])
    return LaunchEnsemble(
        grid, float(t), n, np.concatenate(starts), np.concatenate(ends),
        "zero" if gamma is None else gamma.name,
        None if direction is None else direction.name,
        np.concatenate(ms) if ms else None,
        np.concatenate(qvs) if qvs else None,
    )


def kernel_from_launches(launches, eps=None):
    """Kernel matrix from launches; with ``eps`` the rows are self-normalised
    Girsanov reweightings towards ``eps * direction``."""
    w = None if eps is None else launches.weights(eps)
    est = UlamEstimator(launches.grid).fit(launches.starts, launches.endpoints, sample_weight=w)
    gid = launches.gamma_id if eps is None else f"{eps:g}*{launches.direction_id}"
    return KernelMatrix(est.kernel_, launches.t, gid, launches.n_paths_per_cell, launches.grid)


def estimate_kernel(model, gamma, grid, t, n_paths_per_cell, seed, dt=0.01, t0=0.0,
                    method="simulate", n_jobs=1):
    """Histogram estimate of k_t(x, y, gamma) on ``grid``.

    ``method='simulate'`` launches paths of the perturbed SDE directly;
    ``method='reweight'`` launches unperturbed paths and reweights them by
    the Girsanov density, so kernels for different gamma share every path.
    """
    if t > model.horizon:
        raise ValueError("t exceeds the model horizon")
    if method == "simulate":
        launches = launch(model, grid, t, n_paths_per_cell, seed, gamma=gamma, dt=dt, t0=t0,
                          n_jobs=n_jobs)
        return kernel_from_launches(launches)
    if method == "reweight":
        launches = launch(model, grid, t, n_paths_per_cell, seed, direction=gamma, dt=dt, t0=t0,
                          n_jobs=n_jobs)
        return kernel_from_launches(launches, 1.0)
    raise ValueError(f"unknown method {method!r}")


def derivative_from_launches(launches, centered=True):
    """Girsanov-weighted kernel derivative ``E[1{X_t in j} M_t] / vol`` per row.

    ``centered=True`` subtracts each row's mean weight first. The result is
    then the exact derivative of the self-normalised reweighted kernel, and
    its rows carry exactly zero mass.
    """
    if launches.m is None:
        raise ValueError("launches were simulated without a direction")
    grid = launches.grid
    n_cells = grid.n_cells
    rows = grid.cell_index(launches.starts)
    cols = grid.cell_index(launches.endpoints)
    w = launches.m.copy()
    counts = np.bincount(rows, minlength=n_cells).astype(float)
    if centered:
        row_mean = np.bincount(rows, weights=w, minlength=n_cells) / counts
        w = w - row_mean[rows]
    flat = rows * n_cells + cols
    s1 = np.bincount(flat, weights=w, minlength=n_cells**2).reshape(n_cells, n_cells)
    s2 = np.bincount(flat, weights=w * w, minlength=n_cells**2).reshape(n_cells, n_cells)
    mean = s1 / counts[:, None]
    var = (s2 / counts[:, None] - mean**2) * counts[:, None] / np.maximum(counts[:, None] - 1, 1)
    se = np.sqrt(np.maximum(var, 0.0) / counts[:, None])
    row_mean = np.bincount(rows, weights=w, minlength=n_cells) / counts
    row_var = (np.bincount(rows, weights=w * w, minlength=n_cells) / counts - row_mean**2)
    row_se = np.sqrt(np.maximum(row_var, 0.0) / np.maximum(counts - 1, 1))
    vol = grid.box_volume
    return DKernelMatrix(mean / vol, launches.t, launches.direction_id, launches.n_paths_per_cell,
                         grid, se / vol, row_se)


def kernel_derivative(model, gamma, grid, t, n_paths_per_cell, seed, dt=0.01, t0=0.0,
                      centered=True, n_jobs=1):
    """Directional derivative of the kernel in direction ``gamma``.

    Uses the base-drift paths of ``estimate_kernel(model, None, grid, t,
    n_paths_per_cell, seed)``, so pass the same seed to share paths.
    """
    launches = launch(model, grid, t, n_paths_per_cell, seed, direction=gamma, dt=dt, t0=t0,
                      n_jobs=n_jobs)
    return derivative_from_launches(launches, centered)


def assemble_operators(kernel):
    """Perron-Frobenius and Koopman matrices from a kernel (midpoint quadrature)."""
    vol = kernel.grid.box_volume
    P = kernel.k.T * vol
    return (UlamOperator(P, "perron_frobenius", kernel.t, kernel.gamma_id, kernel.grid),
            UlamOperator(P.T.copy(), "koopman", kernel.t, kernel.gamma_id, kernel.grid))


def spectral_norm(A, tol=1e-8, max_iter=10_000, seed=0):
    """Largest singular value by power iteration on A^T A."""
    A = np.asarray(A, dtype=float)
    if not np.any(A):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            return float(np.sqrt(new))
        lam = new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def _matrix(op):
    return op.matrix if isinstance(op, UlamOperator) else np.asarray(op, dtype=float)


def operator_norm_residual(P0, P_gamma, DP, gamma_v_norm):
    """||P(gamma) - P(0) - DP||_2 / ||gamma||_V (0 when gamma = 0)."""
    A, B, D = _matrix(P0), _matrix(P_gamma), _matrix(DP)
    if not (A.shape == B.shape == D.shape):
        raise ValueError(f"dimension mismatch: {A.shape}, {B.shape}, {D.shape}")
    if gamma_v_norm == 0:
        return 0.0
    return spectral_norm(B - A - D) / gamma_v_norm
