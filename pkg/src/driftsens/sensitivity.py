"""Drift sensitivity of expected path functionals.

The derivative of ``u(gamma) = E[g(X^gamma)]`` at ``gamma = 0`` is estimated
as ``E^0[g M^gamma]`` on unperturbed paths. The remainder
``u(gamma) - u(0) - Du(gamma)`` is sampled pathwise as ``g (Z - 1 - M)`` on
the same paths, so all three terms share their noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InconclusiveFitError
from .girsanov import girsanov_series
from .observables import MCEstimate, mc_estimate, paired_difference
from .sde import simulate_ensemble


def expectation(ensemble, observable):
    return mc_estimate(observable.evaluate(ensemble))


class GirsanovSensitivity(BaseEstimator):
    """Girsanov-weighted value, derivative and remainder for one direction.

    Parameters
    ----------
    model : SdeModel
        The unperturbed model the ensemble was simulated from.
    direction : PerturbationField
    observable : Observable
    at_horizon : bool, default=False
        Pair marginal observables with the weight at the horizon instead of at
        their evaluation time. Both are unbiased; the default has lower variance.

    Attributes
    ----------
    series_ : GirsanovSeries
    values_ : ndarray of shape (n_paths,)
        Observable evaluated on every path.
    derivative_ : MCEstimate
    value_ : MCEstimate
        Plain ensemble mean of the observable, u(0).
    """

    def __init__(self, model, direction, observable, at_horizon=False):
        self.model = model
        self.direction = direction
        self.observable = observable
        self.at_horizon = at_horizon

    def fit(self, X, y=None):
        """X is a PathEnsemble simulated with gamma = 0."""
        self.series_ = girsanov_series(X, self.direction, self.model)
        self.values_ = self.observable.evaluate(X)
        self.index_ = X.grid.n_steps if self.at_horizon else self.observable.index(X.grid)
        self.n_paths_ = X.n_paths
        self.value_ = mc_estimate(self.values_)
        self.derivative_ = mc_estimate(self.values_ * self.series_.m[:, self.index_])
        return self

    def _terms(self, eps):
        s = self.series_.scaled(eps)
        k = self.index_
        g = self.values_
        return g * s.z[:, k], g * s.m[:, k], g * (s.z[:, k] - 1.0 - s.m[:, k])

    def predict(self, epsilons):
        """Reweighted estimates of u(eps * direction), one per epsilon."""
        check_is_fitted(self, "series_")
        return np.array([np.mean(self._terms(e)[0]) for e in np.atleast_1d(epsilons)])

    def remainder(self, eps):
        check_is_fitted(self, "series_")
        return mc_estimate(self._terms(eps)[2])

    def table(self, epsilons):
        """One row per epsilon with u(eps gamma), u(0), Du(eps gamma) and the remainder."""
        check_is_fitted(self, "series_")
        rows = []
        for eps in epsilons:
            weighted, deriv, rem = self._terms(eps)
            u = mc_estimate(weighted)
            d = mc_estimate(deriv)
            r = mc_estimate(rem)
            rows.append({
                "epsilon": float(eps),
                "u_gamma": u.mean, "u_gamma_se": u.std_error,
                "u_0": self.value_.mean, "u_0_se": self.value_.std_error,
                "derivative": d.mean, "derivative_se": d.std_error,
                "remainder": r.mean, "remainder_se": r.std_error,
            })
        return rows


def frechet_derivative(base_ensemble, gamma, model, observable, at_horizon=False):
    """E^0[g M^gamma], with M taken at the marker time for marginal observables."""
    est = GirsanovSensitivity(model, gamma, observable, at_horizon).fit(base_ensemble)
    return est.derivative_


def finite_difference_derivative(model, domain, x0, gamma, observable, grid,
                                 h=1.0, n_paths=10_000, seed=0, n_jobs=1):
    """Central difference [u(h gamma) - u(-h gamma)] / 2h with common noise.

    Both ensembles use the same seed, so path i of each sees the same Wiener
    increments and the estimate is a mean of paired differences.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    plus = simulate_ensemble(model, domain, x0, gamma.scaled(h), grid, n_paths, seed, n_jobs)
    minus = simulate_ensemble(model, domain, x0, gamma.scaled(-h), grid, n_paths, seed, n_jobs)
    return paired_difference(observable.evaluate(plus), observable.evaluate(minus), 2.0 * h)


def remainder(model, domain, x0, gamma, observable, grid, n_paths=10_000, seed=0, n_jobs=1):
    """Pathwise estimate of r(gamma) = u(gamma) - u(0) - Du(gamma)."""
    base = simulate_ensemble(model, domain, x0, None, grid, n_paths, seed, n_jobs)
    return GirsanovSensitivity(model, gamma, observable).fit(base).remainder(1.0)


@dataclass
class DecayFit:
    """Log-log fit of |r(eps)| against eps."""

    slope: float
    intercept: float
    table: list = field(default_factory=list)

    @property
    def n_used(self):
        return sum(row["usable"] for row in self.table)


def fit_loglog(x, y):
    """Least-squares slope and intercept of log|y| on log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.abs(np.asarray(y, dtype=float)))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def _check_epsilons(epsilons, minimum=3):
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size < minimum:
        raise ValueError(f"need at least {minimum} epsilons")
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be positive and strictly decreasing")
    return eps


def quadratic_decay_fit(model, domain, x0, direction, observable, epsilons, grid,
                        n_paths=10_000, seed=0, noise_ratio=0.1, n_jobs=1,
                        base_ensemble=None):
    """Fit the order of r(eps * direction) as eps -> 0 (expected slope 2).

    Points whose standard error is not below ``noise_ratio * |r|`` are flagged
    and left out; fewer than three usable points raise InconclusiveFitError.
    """
    eps = _check_epsilons(epsilons)
    if base_ensemble is None:
        base_ensemble = simulate_ensemble(model, domain, x0, None, grid, n_paths, seed, n_jobs)
    est = GirsanovSensitivity(model, direction, observable).fit(base_ensemble)
    table = est.table(eps)
    for row in table:
        row["usable"] = bool(row["remainder_se"] < noise_ratio * abs(row["remainder"]))
    used = [row for row in table if row["usable"]]
    if len(used) < 3:
        raise InconclusiveFitError(
            f"only {len(used)} epsilon points have a remainder above MC noise", table
        )
    slope, intercept = fit_loglog([r["epsilon"] for r in used], [r["remainder"] for r in used])
    return DecayFit(slope, intercept, table)


def derivative_continuity_scan(model, domain, x0, base_shifts, direction, observable, grid,
                               n_paths=10_000, seed=0, n_jobs=1):
    """Derivative in ``direction`` at base drifts b + b' for each shift b'.

    All ensembles share the seed, so differences against the unshifted
    derivative are paired per path. Returns one row per shift, the unshifted
    drift first.
    """

    def run(shift):
        m = model if shift is None else model.with_drift_shift(shift)
        ens = simulate_ensemble(m, domain, x0, None, grid, n_paths, seed, n_jobs)
        est = GirsanovSensitivity(m, direction, observable).fit(ens)
        return est.values_ * est.series_.m[:, est.index_]

    base = run(None)
    d0 = mc_estimate(base)
    rows = [{"shift": "none", "shift_norm": 0.0, "derivative": d0.mean,
             "derivative_se": d0.std_error, "difference": 0.0, "difference_se": 0.0}]
    for shift in base_shifts:
        samples = run(shift)
        d = mc_estimate(samples)
        diff = paired_difference(samples, base)
        rows.append({
            "shift": shift.name,
            "shift_norm": float(shift.v_norm_estimate) if shift.v_norm_estimate is not None else np.nan,
            "derivative": d.mean, "derivative_se": d.std_error,
            "difference": abs(diff.mean), "difference_se": diff.std_error,
        })
    return rows
