"""SDE models, perturbation fields and seed-reproducible Euler-Maruyama paths.

Arrays follow one layout throughout: states of an ensemble are stored as
``(n_paths, n_steps + 1, d)`` and Wiener increments as ``(n_paths, n_steps, d)``.
Drift, diffusion and perturbation callables are vectorised over a batch of
states: ``f(t, y)`` receives ``y`` of shape ``(n, d)``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ._philox import path_normals
from .exceptions import DomainError, ExplosionError, IllConditionedDiffusionError

EXPLOSION_BOUND = 1e6
CONDITION_LIMIT = 1e8
_CHUNK = 8192


# --------------------------------------------------------------------------
# domain and time grid


@dataclass(frozen=True, eq=False)
class Domain:
    """State space: all of R^d, or a box with normal reflection at its faces."""

    kind: str = "unbounded"
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("unbounded", "box"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.kind == "box":
            lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
            hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
            if lo.shape != hi.shape or lo.ndim != 1:
                raise DomainError("box bounds must be 1-d arrays of equal length")
            if not np.all(lo < hi):
                raise DomainError("box requires lower < upper componentwise")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @classmethod
    def box(cls, lower, upper):
        return cls("box", lower, upper)

    @classmethod
    def unbounded(cls):
        return cls("unbounded")

    @property
    def is_box(self):
        return self.kind == "box"

    @property
    def dimension(self):
        return None if self.lower is None else self.lower.size

    @property
    def volume(self):
        if not self.is_box:
            return np.inf
        return float(np.prod(self.upper - self.lower))

    def contains(self, points):
        points = np.asarray(points, dtype=float)
        if not self.is_box:
            return np.all(np.isfinite(points), axis=-1)
        return np.all((points >= self.lower) & (points <= self.upper), axis=-1)

    def reflect(self, points):
        return reflect_into_domain(points, self)

    def __repr__(self):
        if not self.is_box:
            return "Domain('unbounded')"
        return f"Domain('box', lower={self.lower.tolist()}, upper={self.upper.tolist()})"


def reflect_into_domain(point, domain):
    """Mirror-fold ``point`` into ``domain``.

    Each coordinate outside its interval is folded across the violated face,
    repeatedly, which for an interval of width ``w`` is the map
    ``y -> fold(y mod 2w)``. Coordinates already inside are returned untouched.
    Works on a single point or any ``(..., d)`` batch.
    """
    point = np.asarray(point, dtype=float)
    if not domain.is_box:
        return point.copy()
    lo, hi = domain.lower, domain.upper
    outside = (point < lo) | (point > hi)
    if not outside.any():
        return point.copy()
    width = hi - lo
    y = np.mod(point - lo, 2.0 * width)
    y = np.where(y > width, 2.0 * width - y, y)
    folded = np.clip(lo + y, lo, hi)
    return np.where(outside, folded, point)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 = s_0 < ... < s_n = t_end`` with ``n_steps`` steps."""

    t_end: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.n_steps == 0 and self.t_end != self.t0:
            raise ValueError("a zero-step grid must have t_end == t0")
        if self.n_steps > 0 and not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")

    @classmethod
    def from_dt(cls, t_end, dt, t0=0.0):
        n = int(round((t_end - t0) / dt))
        return cls(float(t_end), max(n, 1), float(t0))

    @property
    def dt(self):
        return (self.t_end - self.t0) / self.n_steps if self.n_steps else 0.0

    @property
    def times(self):
        t = self.t0 + self.dt * np.arange(self.n_steps + 1)
        t[-1] = self.t_end
        return t

    def index_of(self, t):
        """Index of grid time ``t``; raises if ``t`` is not (close to) a node."""
        if self.n_steps == 0:
            if abs(t - self.t0) > 1e-12:
                raise ValueError(f"time {t} is not on the grid")
            return 0
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k > self.n_steps or abs(self.t0 + k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the grid")
        return k


# --------------------------------------------------------------------------
# model and perturbation


def _as_batch(y, d):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y.reshape(-1, d) if d > 1 or y.size != 1 else y.reshape(1, 1)
    return y


@dataclass(frozen=True, eq=False)
class SdeModel:
    """dX = drift(t, X) dt + diffusion(t, X) dW on ``[0, horizon]``.

    ``diffusion`` is either a callable returning ``(n, d, d)`` matrices or a
    constant ``(d, d)`` array (additive noise); the constant case lets the
    integrators skip per-step matrix solves.
    """

    drift: Callable
    diffusion: object
    horizon: float
    dimension: int = 1
    lipschitz_bound: float = 1.0
    ellipticity_bound: float = 1.0
    name: str = "custom"
    period: Optional[float] = None
    _sigma_inv: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if not callable(self.diffusion):
            sigma = np.atleast_2d(np.asarray(self.diffusion, dtype=float))
            if sigma.shape != (self.dimension, self.dimension):
                raise ValueError(
                    f"constant diffusion must be {self.dimension}x{self.dimension}"
                )
            _check_condition(sigma[None])
            object.__setattr__(self, "diffusion", sigma)
            object.__setattr__(self, "_sigma_inv", np.linalg.inv(sigma))

    @property
    def constant_diffusion(self):
        return not callable(self.diffusion)

    def drift_at(self, t, y):
        y = _as_batch(y, self.dimension)
        return np.broadcast_to(
            np.asarray(self.drift(t, y), dtype=float), y.shape
        )

    def diffusion_at(self, t, y):
        """Diffusion matrices, shape ``(n, d, d)``."""
        y = _as_batch(y, self.dimension)
        d = self.dimension
        if self.constant_diffusion:
            return np.broadcast_to(self.diffusion, (y.shape[0], d, d))
        return np.broadcast_to(
            np.asarray(self.diffusion(t, y), dtype=float), (y.shape[0], d, d)
        )

    def noise_term(self, t, y, dw):
        """sigma(t, y) @ dW, batched."""
        if self.constant_diffusion:
            return dw @ self.diffusion.T
        return np.einsum("nij,nj->ni", self.diffusion_at(t, y), dw)

    def whiten(self, t, y, v):
        """sigma(t, y)^{-1} v, batched, with the conditioning guard."""
        if self.constant_diffusion:
            return v @ self._sigma_inv.T
        sigma = self.diffusion_at(t, y)
        _check_condition(sigma)
        return np.linalg.solve(sigma, v[..., None])[..., 0]

    def with_drift_shift(self, shift, name=None):
        """Model with drift ``b + shift`` (``shift`` a PerturbationField)."""
        base = self.drift

        def shifted(t, y):
            return np.asarray(base(t, y), dtype=float) + shift(t, y)

        return replace(
            self,
            drift=shifted,
            name=name or f"{self.name}+{shift.name}",
            _sigma_inv=None,
        )


def _check_condition(sigma):
    sv = np.linalg.svd(sigma, compute_uv=False)
    smin = sv[..., -1]
    with np.errstate(divide="ignore"):
        cond = np.where(smin > 0, (sv[..., 0] / np.where(smin > 0, smin, 1.0)) ** 2, np.inf)
    worst = float(np.max(cond))
    if worst > CONDITION_LIMIT:
        raise IllConditionedDiffusionError(
            f"cond(sigma sigma^T) = {worst:.3g} exceeds {CONDITION_LIMIT:.0e}"
        )


@dataclass(frozen=True, eq=False)
class PerturbationField:
    """Additive drift direction gamma(t, y)."""

    gamma: Callable
    name: str = "gamma"
    v_norm_estimate: Optional[float] = None
    is_zero: bool = False

    def __call__(self, t, y):
        y = np.asarray(y, dtype=float)
        if self.is_zero:
            return np.zeros(y.shape)
        return np.broadcast_to(np.asarray(self.gamma(t, y), dtype=float), y.shape)

    @classmethod
    def zero(cls):
        return cls(lambda t, y: 0.0, name="zero", v_norm_estimate=0.0, is_zero=True)

    @classmethod
    def constant(cls, value, name=None):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(
            lambda t, y: value,
            name=name or f"const({','.join(f'{v:g}' for v in value)})",
            v_norm_estimate=float(np.max(np.abs(value))),
            is_zero=bool(np.all(value == 0)),
        )

    def scaled(self, factor):
        factor = float(factor)
        base = self.gamma
        vn = None if self.v_norm_estimate is None else abs(factor) * self.v_norm_estimate
        return PerturbationField(
            lambda t, y: factor * np.asarray(base(t, y), dtype=float),
            name=f"{factor:g}*{self.name}",
            v_norm_estimate=vn,
            is_zero=self.is_zero or factor == 0.0,
        )

    def with_v_norm(self, domain, resolution=512, time_samples=5, horizon=1.0):
        vn = estimate_v_norm(self, domain, resolution, time_samples, horizon)
        return replace(self, v_norm_estimate=vn)


# --------------------------------------------------------------------------
# paths


@dataclass(eq=False)
class SamplePath:
    """One discretised path and the Wiener increments that drove it."""

    states: np.ndarray  # (n_steps + 1, d)
    increments: np.ndarray  # (n_steps, d)
    grid: TimeGrid
    seed: Optional[int] = None
    path_index: int = 0

    @property
    def x0(self):
        return self.states[0]


@dataclass(eq=False)
class PathEnsemble:
    paths: np.ndarray  # (N, n_steps + 1, d)
    increments: np.ndarray  # (N, n_steps, d)
    grid: TimeGrid
    x0: np.ndarray
    seed: int
    model_id: str = "custom"
    gamma_id: str = "zero"
    path_offset: int = 0

    def __len__(self):
        return self.paths.shape[0]

    @property
    def n_paths(self):
        return self.paths.shape[0]

    @property
    def dimension(self):
        return self.paths.shape[2]

    def endpoints(self, t=None):
        k = self.grid.n_steps if t is None else self.grid.index_of(t)
        return self.paths[:, k, :]

    def path(self, i):
        return SamplePath(self.paths[i], self.increments[i], self.grid,
                          self.seed, self.path_offset + i)


def _euler_maruyama(model, domain, x0s, gamma, grid, seed, path_ids, increments=None):
    n, d = x0s.shape
    n_steps = grid.n_steps
    dt = grid.dt
    states = np.empty((n, n_steps + 1, d))
    states[:, 0] = x0s
    if increments is None:
        dw = np.sqrt(dt) * path_normals(seed, path_ids, n_steps * d).reshape(n, n_steps, d)
    else:
        dw = np.asarray(increments, dtype=float).reshape(n, n_steps, d)
    times = grid.times
    x = x0s.copy()
    for k in range(n_steps):
        t = times[k]
        velocity = model.drift_at(t, x)
        if gamma is not None and not gamma.is_zero:
            velocity = velocity + gamma(t, x)
        x = x + velocity * dt + model.noise_term(t, x, dw[:, k])
        x = reflect_into_domain(x, domain)
        size = np.max(np.abs(x), axis=1)
        bad = ~(size <= EXPLOSION_BOUND)
        if bad.any():
            first = int(np.flatnonzero(bad)[0])
            raise ExplosionError(k + 1, int(path_ids[first]), float(size[first]))
        states[:, k + 1] = x
    return states, dw


def _check_start(model, domain, x0, grid):
    if grid.t_end > model.horizon * (1 + 1e-12):
        raise ValueError(f"grid end {grid.t_end} exceeds model horizon {model.horizon}")
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 0:
        x0 = x0.reshape(1)
    if x0.shape[-1] != model.dimension:
        raise DomainError(f"x0 has dimension {x0.shape[-1]}, model has {model.dimension}")
    inside = domain.contains(x0)
    if not np.all(inside):
        raise DomainError(f"initial state outside domain {domain!r}")
    return x0


def simulate_path(model, domain, x0, gamma, grid, seed, path_index=0, increments=None):
    """Simulate one path of ``dX = (b + gamma) dt + sigma dW`` with reflection.

    The path's noise is the counter stream ``(seed, path_index)``; passing
    ``increments`` of shape ``(n_steps, d)`` overrides it.
    """
    x0 = _check_start(model, domain, x0, grid)
    if x0.ndim != 1:
        raise DomainError("simulate_path takes a single initial state")
    states, dw = _euler_maruyama(
        model, domain, x0[None, :], gamma, grid, seed,
        np.array([path_index], dtype=np.uint64),
        None if increments is None else np.asarray(increments)[None],
    )
    return SamplePath(states[0], dw[0], grid, seed, path_index)


def simulate_ensemble(model, domain, x0, gamma, grid, n_paths, seed,
                      n_jobs=1, path_offset=0):
    """Simulate ``n_paths`` independent paths.

    Path ``i`` uses the stream ``(seed, path_offset + i)``, so the ensemble is
    bit-identical for any ``n_jobs``. ``x0`` is a single state or one state per
    path, shape ``(n_paths, d)``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x0 = _check_start(model, domain, x0, grid)
    x0s = np.broadcast_to(x0, (n_paths, model.dimension)).astype(float)
    ids = np.arange(path_offset, path_offset + n_paths, dtype=np.uint64)
    chunks = [slice(s, min(s + _CHUNK, n_paths)) for s in range(0, n_paths, _CHUNK)]

    def run(sl):
        return _euler_maruyama(model, domain, x0s[sl], gamma, grid, seed, ids[sl])

    if n_jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(sl) for sl in chunks]
    states = np.concatenate([r[0] for r in results])
    dw = np.concatenate([r[1] for r in results])
    return PathEnsemble(
        states, dw, grid, x0.copy(), int(seed), model.name,
        "zero" if gamma is None else gamma.name, int(path_offset),
    )


# --------------------------------------------------------------------------
# V-norm and assumption checks


def _box_samples(domain, resolution):
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(domain.lower, domain.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=1)


def _sup_and_lipschitz(fn, domain, resolution, times, n_out):
    """Max |f_i| and max adjacent difference quotient over a box lattice."""
    axes, pts = _box_samples(domain, resolution)
    shape = tuple(len(a) for a in axes)
    sup = 0.0
    lip = 0.0
    for t in times:
        vals = np.asarray(fn(t, pts), dtype=float).reshape(shape + (n_out,))
        sup = max(sup, float(np.max(np.abs(vals))))
        for ax, a in enumerate(axes):
            h = a[1] - a[0]
            q = np.abs(np.diff(vals, axis=ax)) / h
            lip = max(lip, float(np.max(q)))
    return sup, lip


def estimate_v_norm(field, domain, resolution=512, time_samples=5, horizon=1.0):
    """Sampled lower bound of ||f||_V = max(sup |f_i|, Lipschitz constant).

    Only box domains are supported, since the sup runs over a compact set.
    """
    if not domain.is_box:
        raise DomainError("V-norm estimation needs a box domain (unsupported-domain)")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if getattr(field, "is_zero", False):
        return 0.0
    times = np.linspace(0.0, horizon, max(int(time_samples), 1))
    sup, lip = _sup_and_lipschitz(field, domain, resolution, times, domain.dimension)
    return max(sup, lip)


@dataclass
class AssumptionReport:
    """Sampled diagnostics for the Lipschitz, growth and ellipticity conditions."""

    drift_lipschitz: float
    diffusion_lipschitz: float
    drift_growth_ratio: float
    diffusion_growth_ratio: float
    min_singular_value: float
    lipschitz_bound: float
    ellipticity_bound: float
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    @property
    def lipschitz_quotient(self):
        return max(self.drift_lipschitz, self.diffusion_lipschitz)


def validate_model(model, domain, resolution=64, time_samples=5):
    """Check a model's declared constants on a sampled box lattice.

    Violations are returned as report entries rather than raised.
    """
    if not domain.is_box:
        raise DomainError("assumption sampling needs a box domain (unsupported-domain)")
    d = model.dimension
    times = np.linspace(0.0, model.horizon, max(int(time_samples), 1))
    _, pts = _box_samples(domain, resolution)
    norm1 = 1.0 + np.linalg.norm(pts, axis=1)

    def drift_fn(t, y):
        return model.drift_at(t, y)

    def diff_fn(t, y):
        return model.diffusion_at(t, y).reshape(y.shape[0], d * d)

    _, b_lip = _sup_and_lipschitz(drift_fn, domain, resolution, times, d)
    _, s_lip = _sup_and_lipschitz(diff_fn, domain, resolution, times, d * d)
    b_growth = s_growth = 0.0
    smin = np.inf
    for t in times:
        b = model.drift_at(t, pts)
        s = model.diffusion_at(t, pts)
        b_growth = max(b_growth, float(np.max(np.abs(b) / norm1[:, None])))
        s_growth = max(s_growth, float(np.max(np.abs(s.reshape(-1, d * d)) / norm1[:, None])))
        smin = min(smin, float(np.min(np.linalg.svd(s, compute_uv=False)[..., -1])))

    L = model.lipschitz_bound
    lam = model.ellipticity_bound
    violations = []
    if b_lip > L:
        violations.append(f"A1: drift Lipschitz quotient {b_lip:.4g} > L = {L:g}")
    if s_lip > L:
        violations.append(f"A1: diffusion Lipschitz quotient {s_lip:.4g} > L = {L:g}")
    if b_growth > L:
        violations.append(f"A2: drift growth ratio {b_growth:.4g} > L = {L:g}")
    if s_growth > L:
        violations.append(f"A2: diffusion growth ratio {s_growth:.4g} > L = {L:g}")
    if smin < 1.0 / lam:
        violations.append(
            f"A3: min singular value {smin:.4g} < 1/lambda_sigma = {1.0 / lam:.4g}"
        )
    return AssumptionReport(b_lip, s_lip, b_growth, s_growth, smin, L, lam, violations)
