"""Experiment configuration, orchestration and result files.

A run reads one TOML file, executes one experiment kind, and writes a report
directory holding ``summary.json`` and one CSV per table. Every kind bundles
its own pass/fail checks.
"""
from __future__ import annotations

import inspect
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import io, models
from .exceptions import ConfigError, DriftSensError, ResolutionError
from .observables import OBSERVABLES, position, position_squared
from .sde import EXPLOSION_BOUND, Domain, PerturbationField, TimeGrid, simulate_ensemble
from .sensitivity import (
    GirsanovSensitivity,
    derivative_continuity_scan,
    finite_difference_derivative,
    fit_loglog,
    quadratic_decay_fit,
)
from .spectral import (
    birkhoff_average,
    eigenpairs,
    eigenvalue_response,
    ergodic_average,
    periodic_stationary_family,
    push_density,
    singular_triplets,
)
from .ulam import (
    assemble_operators,
    build_grid,
    derivative_from_launches,
    estimate_kernel,
    kernel_from_launches,
    launch,
    operator_norm_residual,
)

KINDS = (
    "derivative_check",
    "remainder_scaling",
    "operator_response",
    "eigen_response",
    "coherent_sets",
    "periodic_forcing",
    "continuity_scan",
    "discontinuity_demo",
)

PRESET_DIR = Path(__file__).with_name("configs")


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    model: dict
    domain: dict = field(default_factory=lambda: {"kind": "unbounded"})
    time: dict = field(default_factory=dict)
    perturbation: dict = field(default_factory=dict)
    observable: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    out: str = ""
    source: str = ""

    # convenience accessors -------------------------------------------------

    def build_model(self):
        return models.make_model(self.model["name"], **self.model.get("params", {}))

    def build_domain(self):
        if self.domain.get("kind", "unbounded") == "unbounded":
            return Domain.unbounded()
        return Domain.box(self.domain["lower"], self.domain["upper"])

    def build_field(self, spec=None):
        spec = self.perturbation if spec is None else spec
        return models.make_field(spec["kind"], **spec.get("params", {}))

    @property
    def t(self):
        return float(self.time.get("t", 1.0))

    @property
    def dt(self):
        return float(self.time.get("dt", 0.01))

    @property
    def n_jobs(self):
        return int(self.mc.get("n_jobs", 1))

    def param(self, key, default=None):
        return self.experiment.get(key, default)


def _line_of(text, key):
    """1-based line of the first ``key =`` assignment, or None."""
    if not text:
        return None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text, field_path, message):
    raise ConfigError(message, field_path, _line_of(text, field_path.split(".")[-1]))


def _check_params(text, where, factory, params):
    sig = inspect.signature(factory)
    try:
        sig.bind(**params)
    except TypeError as exc:
        _fail(text, where, f"bad parameters for {factory.__name__}: {exc}")


def _check_epsilons(text, key, values):
    if not isinstance(values, list) or not values:
        _fail(text, key, "must be a non-empty list of numbers")
    try:
        eps = [float(v) for v in values]
    except (TypeError, ValueError):
        _fail(text, key, "must contain numbers only")
    if any(not (e > 0 and math.isfinite(e)) for e in eps):
        _fail(text, key, "values must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        _fail(text, key, "values must be strictly decreasing")


def parse_config(text, source=""):
    """Parse and validate a TOML experiment configuration."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", None, int(m.group(1)) if m else None) from None

    kind = data.get("kind")
    if kind not in KINDS:
        _fail(text, "kind", f"unknown experiment kind {kind!r}; choose from {list(KINDS)}")
    seed = data.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        _fail(text, "seed", "an integer seed in [0, 2^64) is required")

    model = data.get("model")
    if not isinstance(model, dict) or model.get("name") not in models.MODELS:
        _fail(text, "model.name", f"unknown model; choose from {sorted(models.MODELS)}")
    _check_params(text, "model.params", models.MODELS[model["name"]], model.get("params", {}))

    domain = data.get("domain", {"kind": "unbounded"})
    if domain.get("kind", "unbounded") not in ("unbounded", "box"):
        _fail(text, "domain.kind", "must be 'unbounded' or 'box'")
    if domain.get("kind") == "box":
        try:
            Domain.box(domain["lower"], domain["upper"])
        except (KeyError, ValueError, TypeError) as exc:
            _fail(text, "domain.lower", f"invalid box: {exc}")

    pert = data.get("perturbation", {})
    if pert:
        if pert.get("kind") not in models.FIELDS:
            _fail(text, "perturbation.kind", f"unknown perturbation; choose from {sorted(models.FIELDS)}")
        _check_params(text, "perturbation.params", models.FIELDS[pert["kind"]], pert.get("params", {}))

    obs = data.get("observable", {})
    for name in obs.get("names", [obs["name"]] if "name" in obs else []):
        if name not in OBSERVABLES:
            _fail(text, "observable.name", f"unknown observable {name!r}; choose from {sorted(OBSERVABLES)}")

    exp = data.get("experiment", {})
    for key in ("epsilons", "shifts"):
        if key in exp:
            _check_epsilons(text, key, exp[key])
    for key in ("noise_levels", "bump_widths"):
        if key in exp:
            _check_epsilons(text, key, exp[key])

    time = data.get("time", {})
    for key in ("t", "dt"):
        if key in time and not float(time[key]) > 0:
            _fail(text, f"time.{key}", "must be positive")
    grid = data.get("grid", {})
    if "boxes_per_axis" in grid and int(grid["boxes_per_axis"]) < 2:
        _fail(text, "grid.boxes_per_axis", "must be >= 2")
    for key, val in data.get("mc", {}).items():
        if key != "n_jobs" and (not isinstance(val, int) or val < 1):
            _fail(text, f"mc.{key}", "must be a positive integer")

    needs = {
        "operator_response": ("perturbation", "grid"),
        "eigen_response": ("perturbation", "grid"),
        "coherent_sets": ("grid",),
        "periodic_forcing": ("grid",),
        "derivative_check": ("perturbation",),
        "remainder_scaling": ("perturbation",),
        "continuity_scan": ("perturbation",),
        "discontinuity_demo": ("grid",),
    }[kind]
    for section in needs:
        if not data.get(section):
            _fail(text, section, f"section [{section}] is required for {kind}")
    if kind in ("operator_response", "eigen_response", "coherent_sets", "periodic_forcing",
                "discontinuity_demo") and domain.get("kind") != "box":
        _fail(text, "domain.kind", f"{kind} needs a box domain")
    if kind in ("remainder_scaling", "operator_response", "eigen_response") and "epsilons" not in exp:
        _fail(text, "epsilons", "an epsilons list is required")

    return ExperimentConfig(kind, seed, model, domain, time, pert, obs, grid, data.get("mc", {}),
                            exp, data.get("out", ""), source)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


def preset_paths(kind=None):
    paths = sorted(PRESET_DIR.glob("*.toml"))
    if kind is None:
        return paths
    return [p for p in paths if p.stem == kind or p.stem.startswith(kind + "__")]


# --------------------------------------------------------------------------
# results


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    comparison: str
    passed: bool

    def as_dict(self):
        return {"name": self.name, "value": _json_num(self.value), "threshold": _json_num(self.threshold),
                "comparison": self.comparison, "passed": bool(self.passed)}


def check(name, value, comparison, threshold):
    value = float(value)
    ops = {"<": value < threshold, "<=": value <= threshold, ">": value > threshold,
           ">=": value >= threshold}
    return Check(name, value, float(threshold), comparison, bool(ops[comparison]))


def _json_num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass
class ExperimentResult:
    kind: str
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)
    error: str = ""

    @property
    def passed(self):
        return not self.error and bool(self.checks) and all(c.passed for c in self.checks)


# --------------------------------------------------------------------------
# experiment kinds


def _observable(cfg, name, t):
    bound = cfg.observable.get("bound")
    box = cfg.build_domain()
    if bound is None:
        if box.is_box:
            bound = float(np.max(np.abs(np.concatenate([box.lower, box.upper]))))
        else:
            bound = EXPLOSION_BOUND
        if name == "x2":
            bound = bound**2
    factory = {"x": position, "x2": position_squared}[name]
    return factory(t, float(bound))


def _observable_names(cfg):
    obs = cfg.observable
    return list(obs.get("names", [obs.get("name", "x")]))


def _analytic_derivative(cfg, name, x0, t):
    """Closed form for constant drift with a constant direction, else None."""
    if cfg.model["name"] not in ("constant_drift", "brownian") or cfg.perturbation["kind"] != "constant":
        return None
    if cfg.build_domain().is_box:
        return None
    c = float(cfg.perturbation.get("params", {}).get("value", 1.0))
    b = float(cfg.model.get("params", {}).get("drift", 0.0))
    if name == "x":
        return c * t
    return 2.0 * (x0 + b * t) * c * t


def run_derivative_check(cfg):
    model, domain, gamma = cfg.build_model(), cfg.build_domain(), cfg.build_field()
    x0 = np.atleast_1d(np.asarray(cfg.param("x0", [0.0]), dtype=float))
    grid = TimeGrid.from_dt(cfg.t, cfg.dt)
    n = int(cfg.mc.get("n_paths", 100_000))
    h = float(cfg.param("fd_step", 0.1))
    base = simulate_ensemble(model, domain, x0, None, grid, n, cfg.seed, cfg.n_jobs)
    res = ExperimentResult("derivative_check")
    rows = []
    for name in _observable_names(cfg):
        obs = _observable(cfg, name, cfg.t)
        est = GirsanovSensitivity(model, gamma, obs).fit(base)
        d = est.derivative_
        fd = finite_difference_derivative(model, domain, x0, gamma, obs, grid, h, n,
                                          cfg.seed + 1, cfg.n_jobs)
        exact = _analytic_derivative(cfg, name, float(x0[0]), cfg.t)
        rows.append({"observable": obs.name, "derivative": d.mean, "derivative_se": d.std_error,
                     "fd": fd.mean, "fd_se": fd.std_error,
                     "analytic": exact if exact is not None else float("nan")})
        if exact is not None:
            res.checks.append(check(f"{name}: |D - analytic| / se", abs(d.z_score(exact)), "<=", 3.0))
        z = abs(d.mean - fd.mean) / math.hypot(d.std_error, fd.std_error)
        res.checks.append(check(f"{name}: |D - FD| / combined se", z, "<=", 3.0))
        res.summary[f"derivative_{name}"] = d.mean
        res.summary[f"derivative_{name}_se"] = d.std_error
    res.tables["derivative"] = rows
    return res


def run_remainder_scaling(cfg):
    model, domain, gamma = cfg.build_model(), cfg.build_domain(), cfg.build_field()
    x0 = np.atleast_1d(np.asarray(cfg.param("x0", [0.0]), dtype=float))
    grid = TimeGrid.from_dt(cfg.t, cfg.dt)
    n = int(cfg.mc.get("n_paths", 100_000))
    lo, hi = cfg.param("slope_range", [1.7, 2.3])
    res = ExperimentResult("remainder_scaling")
    base = simulate_ensemble(model, domain, x0, None, grid, n, cfg.seed, cfg.n_jobs)
    for name in _observable_names(cfg):
        obs = _observable(cfg, name, cfg.t)
        fit = quadratic_decay_fit(model, domain, x0, gamma, obs, cfg.param("epsilons"), grid,
                                  n, cfg.seed, float(cfg.param("noise_ratio", 0.1)),
                                  cfg.n_jobs, base_ensemble=base)
        for row in fit.table:
            row["observable"] = obs.name
        res.tables[f"remainder_{name}"] = fit.table
        res.summary[f"slope_{name}"] = fit.slope
        res.checks.append(check(f"{name}: slope >= {lo}", fit.slope, ">=", lo))
        res.checks.append(check(f"{name}: slope <= {hi}", fit.slope, "<=", hi))
    return res


def _launches(cfg, direction):
    model, domain = cfg.build_model(), cfg.build_domain()
    grid = build_grid(domain, int(cfg.grid.get("boxes_per_axis", 32)))
    n = int(cfg.mc.get("n_paths_per_cell", 2000))
    L = launch(model, grid, cfg.t, n, cfg.seed, direction=direction, dt=cfg.dt, n_jobs=cfg.n_jobs)
    return model, grid, L


def _v_norm(field_, domain):
    if field_.v_norm_estimate is not None:
        return float(field_.v_norm_estimate)
    return float(field_.with_v_norm(domain).v_norm_estimate)


def run_operator_response(cfg):
    gamma = cfg.build_field()
    model, grid, L = _launches(cfg, gamma)
    vn = _v_norm(gamma, grid.domain)
    k0 = kernel_from_launches(L)
    P0, U0 = assemble_operators(k0)
    dk = derivative_from_launches(L, centered=bool(cfg.param("centered", True)))
    DP = dk.operator().matrix
    res = ExperimentResult("operator_response")
    rows = []
    for eps in cfg.param("epsilons"):
        Pe = assemble_operators(kernel_from_launches(L, eps))[0]
        ratio = operator_norm_residual(P0, Pe, eps * DP, eps * vn)
        rows.append({"epsilon": eps, "v_norm": eps * vn, "ratio": ratio})
    res.tables["residual"] = rows
    ratios = [r["ratio"] for r in rows]
    res.checks.append(check("ratio decreases monotonically",
                            float(np.max(np.diff(ratios))), "<", 0.0))
    res.checks.append(check("terminal ratio / initial ratio", ratios[-1] / ratios[0], "<", 0.5))

    # structural checks on the unperturbed operators
    rng = np.random.default_rng(cfg.seed)
    f, g = rng.standard_normal((2, grid.n_cells))
    adj = abs(grid.inner(P0.apply(f), g) - grid.inner(f, U0.apply(g)))
    res.checks.append(check("|row mass - 1| (max)", float(np.max(np.abs(k0.row_mass - 1))), "<=", 1e-12))
    res.checks.append(check("adjointness |<Pf,g> - <f,Ug>|", adj, "<=", 1e-12))
    uncentered = derivative_from_launches(L, centered=False)
    z = np.max(np.abs(uncentered.row_mass) / (uncentered.row_mass_se + 1e-300))
    res.summary["dk_row_mass_max_z"] = float(z)

    # kernel bound stability over a ball sample of directions
    scale = float(cfg.param("bound_radius", 0.25)) / vn
    maxima = [k0.max_entry]
    bound_rows = [{"scale": 0.0, "v_norm": 0.0, "max_entry": k0.max_entry}]
    n = int(cfg.mc.get("n_paths_per_cell", 2000))
    for s in cfg.param("bound_samples", [-1.0, -0.5, 0.5, 1.0]):
        field_ = gamma.scaled(s * scale)
        kk = estimate_kernel(model, field_, grid, cfg.t, n, cfg.seed, dt=cfg.dt, n_jobs=cfg.n_jobs)
        maxima.append(kk.max_entry)
        bound_rows.append({"scale": s * scale, "v_norm": abs(s) * scale * vn, "max_entry": kk.max_entry})
    spread = (max(maxima) - min(maxima)) / max(maxima)
    res.tables["kernel_bound"] = bound_rows
    res.checks.append(check("max kernel entry relative spread", spread, "<", 0.25))
    res.matrices["P0"] = P0
    res.matrices["DP"] = dk.operator()
    return res


def _sign_split(vec, grid, probes):
    idx = grid.cell_index(np.asarray(probes, dtype=float).reshape(-1, 1))
    v = np.real(vec[idx])
    return float(v[0] * v[1]), v


def run_eigen_response(cfg):
    gamma = cfg.build_field()
    model, grid, L = _launches(cfg, gamma)
    vn = _v_norm(gamma, grid.domain)
    which = int(cfg.param("eigen_index", 1))
    P0 = assemble_operators(kernel_from_launches(L))[0]
    DP = derivative_from_launches(L).operator()
    pairs = eigenpairs(P0, max(which + 1, int(cfg.param("n_eigen", 4))))
    resp = [eigenvalue_response(P0, DP, p) for p in pairs[: which + 1]]
    res = ExperimentResult("eigen_response")
    rows, lam1_dev = [], abs(pairs[0].value - 1.0)
    for eps in cfg.param("epsilons"):
        pe = eigenpairs(assemble_operators(kernel_from_launches(L, eps))[0], which + 1)
        lam1_dev = max(lam1_dev, abs(pe[0].value - 1.0))
        change = (pe[which].value - pairs[which].value).real
        rows.append({"epsilon": eps, "lambda": pe[which].value.real, "fd": change / eps,
                     "response": resp[which].dvalue.real,
                     "second_difference": abs(change - eps * resp[which].dvalue.real)})
    res.tables["eigen_response"] = rows
    eps = [r["epsilon"] for r in rows]
    slope, _ = fit_loglog(eps, [r["second_difference"] for r in rows])
    rel = abs(rows[-1]["response"] - rows[-1]["fd"]) / abs(rows[-1]["fd"])
    res.summary.update({"lambda": pairs[which].value.real, "dlambda": resp[which].dvalue.real,
                        "dlambda_per_v_norm": resp[which].dvalue.real / vn,
                        "dlambda1": float(np.real(resp[0].dvalue)), "second_difference_slope": slope,
                        "fd_at_smallest_epsilon": rows[-1]["fd"]})
    res.checks.append(check("max |lambda_1 - 1|", lam1_dev, "<=", 1e-10))
    res.checks.append(check("|dlambda_1|", abs(resp[0].dvalue), "<=", 1e-10))
    res.checks.append(check(f"|dlambda_{which + 1} - FD| / |FD| at eps={eps[-1]:g}", rel, "<=", 0.1))
    lo, hi = cfg.param("slope_range", [1.7, 2.3])
    res.checks.append(check("second-difference slope >= lower", slope, ">=", lo))
    res.checks.append(check("second-difference slope <= upper", slope, "<=", hi))
    res.tables["eigenvalues"] = [{"index": p.index, "re": p.value.real, "im": p.value.imag,
                                  "gap": p.gap, "residual": p.residual} for p in pairs]
    res.tables["eigenvectors"] = [
        {"x": float(c[0]), "right": float(np.real(pairs[which].right_vector[i])),
         "dvector": float(np.real(resp[which].dvector[i]))}
        for i, c in enumerate(grid.centers)]
    return res


def run_coherent_sets(cfg):
    model, domain = cfg.build_model(), cfg.build_domain()
    grid = build_grid(domain, int(cfg.grid.get("boxes_per_axis", 32)))
    n = int(cfg.mc.get("n_paths_per_cell", 5000))
    ker = estimate_kernel(model, None, grid, cfg.t, n, cfg.seed, dt=cfg.dt, n_jobs=cfg.n_jobs)
    P = assemble_operators(ker)[0]
    trip = singular_triplets(P, int(cfg.param("n_singular", 4)))
    res = ExperimentResult("coherent_sets")
    res.tables["singular_values"] = [{"index": t.index, "re": t.value, "im": 0.0,
                                      "gap": (trip[i - 1].value - t.value) if i else float("nan"),
                                      "residual": float("nan")} for i, t in enumerate(trip)]
    res.tables["singular_vectors"] = [
        {"x": float(c[0]), "left_1": trip[0].left_vector[i], "right_1": trip[0].right_vector[i],
         "left_2": trip[1].left_vector[i], "right_2": trip[1].right_vector[i]}
        for i, c in enumerate(grid.centers)]
    res.summary["sigma_1"] = trip[0].value
    res.summary["sigma_2"] = trip[1].value
    if "leading_value" in cfg.experiment:
        target = float(cfg.param("leading_value"))
        res.checks.append(check("|sigma_1 - target|", abs(trip[0].value - target), "<=",
                                float(cfg.param("leading_tol", 1e-3))))
        for side in ("left_vector", "right_vector"):
            v = getattr(trip[0], side)
            dev = float(np.max(np.abs(v / np.mean(v) - 1.0)))
            res.checks.append(check(f"leading {side} max relative deviation from constant", dev,
                                    "<=", float(cfg.param("constant_tol", 0.05))))
    if "probes" in cfg.experiment:
        for side in ("left_vector", "right_vector"):
            prod, v = _sign_split(getattr(trip[1], side), grid, cfg.param("probes"))
            res.summary[f"second_{side}_at_probes"] = [float(x) for x in v]
            res.checks.append(check(f"second {side} sign product across split", prod, "<", 0.0))
    res.matrices["P"] = P
    return res


def _periodic_observable(name, period):
    if name == "x":
        return lambda s, y: y[:, 0]
    if name == "x_sin":
        return lambda s, y: y[:, 0] * np.sin(2.0 * np.pi * s / period)
    raise ConfigError(f"unknown periodic observable {name!r}", "observables")


def run_periodic_forcing(cfg):
    model, domain = cfg.build_model(), cfg.build_domain()
    grid = build_grid(domain, int(cfg.grid.get("boxes_per_axis", 32)))
    gamma = cfg.build_field() if cfg.perturbation else None
    n_phase = int(cfg.param("n_phase_samples", 20))
    fam = periodic_stationary_family(model, gamma, grid, n_phase,
                                     int(cfg.mc.get("n_paths_per_cell", 10_000)), cfg.seed,
                                     dt=cfg.dt, n_jobs=cfg.n_jobs)
    if gamma is not None:
        model = model.with_drift_shift(gamma)
    res = ExperimentResult("periodic_forcing")
    pushed = push_density(model, grid, fam.densities[0], fam.period,
                          int(cfg.mc.get("n_particles", 400_000)), cfg.seed + 1, dt=cfg.dt,
                          n_jobs=cfg.n_jobs)
    l1 = grid.box_volume * float(np.sum(np.abs(pushed - fam.densities[0])))
    res.checks.append(check("period-operator eigenvalue |lambda - 1|",
                            float(np.max(np.abs(fam.period_eigenvalues - 1))), "<=", 1e-3))
    res.checks.append(check("one-period L1 return distance (particle push)", l1, "<", 0.02))
    rows = []
    center = 0.5 * (domain.lower + domain.upper)
    for name in cfg.param("observables", ["x", "x_sin"]):
        g = _periodic_observable(name, fam.period)
        spectral = ergodic_average(g, fam)
        birk = birkhoff_average(g, model, domain, center, int(cfg.param("n_periods", 200)),
                                cfg.seed + 2, dt=cfg.dt,
                                n_trajectories=int(cfg.mc.get("n_trajectories", 50)),
                                n_jobs=cfg.n_jobs)
        rows.append({"observable": name, "spectral": spectral, "birkhoff": birk,
                     "difference": abs(spectral - birk)})
        res.checks.append(check(f"{name}: |spectral - Birkhoff|", abs(spectral - birk), "<", 0.02))
    res.tables["ergodic_average"] = rows
    res.summary["l1_return_distance"] = l1
    res.summary["consistency"] = fam.consistency
    res.tables["family"] = [
        {"phase": float(s), "x": float(c[0]), "density": float(v)}
        for s, f in zip(fam.phases, fam.densities) for c, v in zip(grid.centers, f)]
    return res


def run_continuity_scan(cfg):
    model, domain, gamma = cfg.build_model(), cfg.build_domain(), cfg.build_field()
    x0 = np.atleast_1d(np.asarray(cfg.param("x0", [0.0]), dtype=float))
    grid = TimeGrid.from_dt(cfg.t, cfg.dt)
    n = int(cfg.mc.get("n_paths", 100_000))
    shape = cfg.param("shift_field", {"kind": "constant", "params": {"value": 1.0}})
    base_shift = cfg.build_field(shape)
    vn = _v_norm(base_shift, domain) if domain.is_box else base_shift.v_norm_estimate
    shifts = [base_shift.scaled(s / vn) for s in cfg.param("shifts", [0.4, 0.2, 0.1])]
    obs = _observable(cfg, _observable_names(cfg)[0], cfg.t)
    rows = derivative_continuity_scan(model, domain, x0, shifts, gamma, obs, grid, n,
                                      cfg.seed, cfg.n_jobs)
    res = ExperimentResult("continuity_scan")
    res.tables["continuity"] = rows
    diffs = [r["difference"] for r in rows[1:]]
    res.checks.append(check("differences decrease with shift norm",
                            float(np.max(np.diff(diffs))), "<", 0.0))
    return res


def discontinuity_distance(model_name, model_params, noise, offset, t, grid, width, center,
                           n_paths_per_cell, seed, dt=0.01, n_jobs=1):
    """L2 distance between Koopman images of a normalised cell indicator."""
    if width < grid.widths[0] * (1 - 1e-12):
        raise ResolutionError(f"bump width {width:g} is narrower than one cell ({grid.widths[0]:g})")
    params = dict(model_params, sigma=noise)
    model = models.make_model(model_name, **params)
    k0 = estimate_kernel(model, None, grid, t, n_paths_per_cell, seed, dt=dt, n_jobs=n_jobs)
    k1 = estimate_kernel(model, PerturbationField.constant(offset), grid, t, n_paths_per_cell,
                         seed, dt=dt, n_jobs=n_jobs)
    c = grid.centers[:, 0]
    inside = (c >= center - width / 2) & (c < center + width / 2)
    f = inside / np.sqrt(inside.sum() * grid.box_volume)
    U0, U1 = assemble_operators(k0)[1], assemble_operators(k1)[1]
    return grid.norm(U1.apply(f) - U0.apply(f))


def run_discontinuity_demo(cfg):
    domain = cfg.build_domain()
    grid = build_grid(domain, int(cfg.grid.get("boxes_per_axis", 200)))
    offset = float(cfg.param("drift_offset", 0.5))
    center = float(cfg.param("bump_center", 0.5))
    n = int(cfg.mc.get("n_paths_per_cell", 200))
    noises = [float(s) for s in cfg.param("noise_levels", [0.5, 0.05, 0.005])]
    widths = [float(w) for w in cfg.param("bump_widths", [0.2, 0.02])]
    rows = []
    for s in noises:
        for w in widths:
            d = discontinuity_distance(cfg.model["name"], cfg.model.get("params", {}), s, offset,
                                       cfg.t, grid, w, center, n, cfg.seed, cfg.dt, cfg.n_jobs)
            rows.append({"sigma_noise": s, "bump_width": w, "distance": d, "distance_squared": d * d})
    res = ExperimentResult("discontinuity_demo")
    res.tables["discontinuity"] = rows
    small = [r for r in rows if r["sigma_noise"] == noises[-1] and r["bump_width"] == widths[-1]][0]
    large = [r for r in rows if r["sigma_noise"] == noises[0] and r["bump_width"] == widths[-1]][0]
    res.checks.append(check(f"distance at sigma={noises[-1]:g}, width={widths[-1]:g}",
                            small["distance"], ">=", float(cfg.param("min_small_noise", 1.8))))
    res.checks.append(check(f"distance at sigma={noises[0]:g}, width={widths[-1]:g}",
                            large["distance"], "<=", float(cfg.param("max_large_noise", 0.5))))
    return res


RUNNERS = {
    "derivative_check": run_derivative_check,
    "remainder_scaling": run_remainder_scaling,
    "operator_response": run_operator_response,
    "eigen_response": run_eigen_response,
    "coherent_sets": run_coherent_sets,
    "periodic_forcing": run_periodic_forcing,
    "continuity_scan": run_continuity_scan,
    "discontinuity_demo": run_discontinuity_demo,
}


# --------------------------------------------------------------------------
# orchestration


def execute(cfg):
    """Run an experiment; library errors are recorded, not raised."""
    try:
        return RUNNERS[cfg.kind](cfg)
    except DriftSensError as exc:
        if isinstance(exc, ConfigError):
            raise
        return ExperimentResult(cfg.kind, error=f"{type(exc).__name__}: {exc}")


def write_report(result, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, rows in result.tables.items():
        io.write_table(out / f"{name}.csv", rows)
        files.append(f"{name}.csv")
    for name, op in result.matrices.items():
        io.write_matrix(out / f"{name}.csv", op.matrix, op.t, op.gamma_id)
        files.append(f"{name}.csv")
    summary = {
        "kind": result.kind,
        "seed": cfg.seed,
        "config": cfg.source,
        "passed": result.passed,
        "error": result.error or None,
        "checks": [c.as_dict() for c in result.checks],
        "values": {k: (_json_num(v) if isinstance(v, (float, int, np.floating)) else v)
                   for k, v in result.summary.items()},
        "files": files,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def run_experiment(cfg, out_dir=None):
    """Run ``cfg`` and write its report directory; returns the result."""
    result = execute(cfg)
    target = out_dir or cfg.out or f"runs/{cfg.kind}"
    write_report(result, cfg, target)
    return result
