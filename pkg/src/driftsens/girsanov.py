"""Girsanov weights along base-measure paths.

For a direction gamma the weight process is

    M_t   = sum_j theta_j . dW_j,          theta_j = sigma^{-1} gamma (t_j, X_j)
    <M>_t = sum_j |theta_j|^2 dt
    Z_t   = exp(M_t - <M>_t / 2)

with left-point evaluation. ``theta . dW`` equals
``gamma^T (sigma sigma^T)^{-1} (dX - b dt)`` on every unreflected step, and
using the stored Wiener increment directly keeps the reflection push out of
the stochastic integral. With this discretisation ``E[g Z]`` reproduces the
perturbed Euler scheme exactly (the one-step likelihood ratio of shifted
Gaussians), reflected or not.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EstimationError, WeightOverflowError
from .observables import mc_estimate
from .sde import PathEnsemble, SamplePath

_EXP_LIMIT = 700.0


@dataclass
class GirsanovSeries:
    """M, <M> and Z on the time grid; 1-d for a path, ``(N, n_steps + 1)`` for an ensemble."""

    m: np.ndarray
    qv: np.ndarray
    z: np.ndarray

    def scaled(self, factor):
        """Series for ``factor * gamma`` (M is linear, <M> quadratic in gamma)."""
        m = factor * self.m
        qv = factor**2 * self.qv
        return GirsanovSeries(m, qv, _exp_martingale(m, qv))


def _unpack(path):
    if isinstance(path, PathEnsemble):
        return path.paths, path.increments, path.grid, False
    if isinstance(path, SamplePath):
        return path.states[None], path.increments[None], path.grid, True
    raise TypeError(f"expected SamplePath or PathEnsemble, got {type(path).__name__}")


def _weights(path, gamma, model):
    states, dw, grid, single = _unpack(path)
    n, n_steps1, d = states.shape
    m = np.zeros((n, n_steps1))
    qv = np.zeros((n, n_steps1))
    if gamma is not None and not gamma.is_zero and grid.n_steps > 0:
        times = grid.times
        dt = grid.dt
        dm = np.empty((n, grid.n_steps))
        dq = np.empty((n, grid.n_steps))
        for k in range(grid.n_steps):
            y = states[:, k, :]
            theta = model.whiten(times[k], y, gamma(times[k], y))
            dm[:, k] = np.sum(theta * dw[:, k, :], axis=1)
            dq[:, k] = np.sum(theta * theta, axis=1) * dt
        np.cumsum(dm, axis=1, out=m[:, 1:])
        np.cumsum(dq, axis=1, out=qv[:, 1:])
    return m, qv, single


def _exp_martingale(m, qv):
    exponent = m - 0.5 * qv
    worst = np.max(exponent) if exponent.size else 0.0
    if worst > _EXP_LIMIT:
        idx = np.unravel_index(np.argmax(exponent), exponent.shape)
        raise WeightOverflowError(
            f"exp(M - <M>/2) overflows: M = {m[idx]:.6g}, <M> = {qv[idx]:.6g}"
        )
    return np.exp(exponent)


def girsanov_series(path, gamma, model):
    """M, <M> and Z for a path or an ensemble generated under the base drift."""
    m, qv, single = _weights(path, gamma, model)
    z = _exp_martingale(m, qv)
    if single:
        return GirsanovSeries(m[0], qv[0], z[0])
    return GirsanovSeries(m, qv, z)


def ito_weight(path, gamma, model):
    m, _, single = _weights(path, gamma, model)
    return m[0] if single else m


def quadratic_variation(path, gamma, model):
    _, qv, single = _weights(path, gamma, model)
    return qv[0] if single else qv


def exponential_martingale(path, gamma, model):
    return girsanov_series(path, gamma, model).z


def reweighted_expectation(base_ensemble, gamma, model, observable, series=None):
    """Estimate E[g(X^gamma)] as E^0[g Z^gamma] on unperturbed paths.

    Marginal observables pair with Z at their evaluation time; path
    functionals with Z at the horizon.
    """
    if series is None:
        series = girsanov_series(base_ensemble, gamma, model)
    g = observable.evaluate(base_ensemble)
    k = observable.index(base_ensemble.grid)
    prod = g * series.z[:, k]
    ok = np.isfinite(prod)
    if not ok.any():
        raise EstimationError("every path produced a non-finite weighted value")
    return mc_estimate(prod[ok])
