"""Bounded path observables and Monte Carlo estimates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import InadmissibleObservableError


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_samples: int

    def __iter__(self):
        return iter((self.mean, self.std_error, self.n_samples))

    def z_score(self, target):
        if self.std_error == 0:
            return 0.0 if self.mean == target else np.inf
        return (self.mean - target) / self.std_error


def mc_estimate(values):
    """Sample mean and standard error (sample std / sqrt(n))."""
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    if n == 0:
        raise ValueError("no samples")
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(mean, se, n)


def paired_difference(a, b, scale=1.0):
    """Estimate of E[(a - b) / scale] from paired samples (common random numbers)."""
    return mc_estimate((np.asarray(a) - np.asarray(b)) / scale)


@dataclass(frozen=True, eq=False)
class Observable:
    """A bounded functional g of a path.

    ``kind='marginal'`` observables are ``g(X_t)`` for ``t = t_marker`` and
    ``fn`` maps states ``(N, d)`` to ``(N,)``. ``kind='path'`` observables get
    the full state array ``(N, n_steps + 1, d)`` and the grid times.
    """

    fn: Callable
    bound: float
    kind: str = "marginal"
    t_marker: Optional[float] = None
    name: str = "g"

    def __post_init__(self):
        if self.kind not in ("marginal", "path"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if not np.isfinite(self.bound) or self.bound < 0:
            raise InadmissibleObservableError(
                "observables must declare a finite sup bound"
            )

    def index(self, grid):
        """Grid index whose Girsanov weight pairs with this observable."""
        if self.kind == "marginal" and self.t_marker is not None:
            return grid.index_of(self.t_marker)
        return grid.n_steps

    def evaluate(self, ensemble):
        grid = ensemble.grid
        if self.kind == "marginal":
            values = self.fn(ensemble.paths[:, self.index(grid), :])
        else:
            values = self.fn(ensemble.paths, grid.times)
        values = np.broadcast_to(
            np.asarray(values, dtype=float), (ensemble.n_paths,)
        ).copy()
        worst = float(np.max(np.abs(values))) if values.size else 0.0
        if not worst <= self.bound:
            raise InadmissibleObservableError(
                f"observable {self.name!r} reached {worst:.6g}, above its bound {self.bound:g}"
            )
        return values


def marginal(fn, t, bound, name="g"):
    return Observable(fn, bound, "marginal", t, name)


def path_functional(fn, bound, name="g"):
    return Observable(fn, bound, "path", None, name)


def constant_observable(value=1.0):
    return Observable(lambda y: np.full(y.shape[0], float(value)), abs(value), "marginal",
                      None, f"const({value:g})")


def position(t, bound, component=0):
    return marginal(lambda y: y[:, component], t, bound, f"x[{component}]_t")


def position_squared(t, bound, component=0):
    return marginal(lambda y: y[:, component] ** 2, t, bound, f"x[{component}]_t^2")


def indicator(lower, upper, t, component=0):
    return marginal(
        lambda y: ((y[:, component] >= lower) & (y[:, component] < upper)).astype(float),
        t, 1.0, f"1[{lower:g},{upper:g})(x_t)",
    )


OBSERVABLES = {
    "x": position,
    "x2": position_squared,
}
