"""Built-in SDE models and perturbation directions.

Experiments refer to these by name so that a run is reproducible from its
configuration file alone.
"""
import numpy as np

from .sde import Domain, PerturbationField, SdeModel


def brownian(sigma=1.0, dimension=1, horizon=10.0):
    return SdeModel(
        drift=lambda t, y: 0.0,
        diffusion=sigma * np.eye(dimension),
        horizon=horizon,
        dimension=dimension,
        lipschitz_bound=max(abs(sigma), 1.0),
        ellipticity_bound=1.0 / abs(sigma),
        name=f"brownian(sigma={sigma:g})",
    )


def constant_drift(drift=0.0, sigma=1.0, horizon=10.0):
    b = float(drift)
    return SdeModel(
        drift=lambda t, y: b,
        diffusion=np.array([[sigma]], dtype=float),
        horizon=horizon,
        lipschitz_bound=max(abs(b), abs(sigma), 1.0),
        ellipticity_bound=1.0 / abs(sigma),
        name=f"constant_drift(b={b:g},sigma={sigma:g})",
    )


def ornstein_uhlenbeck(theta=1.0, mu=0.0, sigma=1.0, horizon=10.0):
    return SdeModel(
        drift=lambda t, y: theta * (mu - y),
        diffusion=np.array([[sigma]], dtype=float),
        horizon=horizon,
        lipschitz_bound=max(abs(theta), abs(theta * mu), abs(sigma), 1.0),
        ellipticity_bound=1.0 / abs(sigma),
        name=f"ornstein_uhlenbeck(theta={theta:g},mu={mu:g},sigma={sigma:g})",
    )


def double_well(sigma=0.7, horizon=10.0):
    """b = -d/dx (x^2 - 1)^2 = -4x(x^2 - 1); meant for the box [-2, 2]."""
    return SdeModel(
        drift=lambda t, y: -4.0 * y * (y * y - 1.0),
        diffusion=np.array([[sigma]], dtype=float),
        horizon=horizon,
        lipschitz_bound=50.0,
        ellipticity_bound=1.0 / abs(sigma),
        name=f"double_well(sigma={sigma:g})",
    )


def periodic_tilt(amplitude=0.5, period=1.0, sigma=1.0, horizon=1e6):
    """Spatially constant, time-periodic drift a sin(2 pi t / period)."""
    omega = 2.0 * np.pi / period

    def drift(t, y):
        return amplitude * np.sin(omega * t)

    return SdeModel(
        drift=drift,
        diffusion=np.array([[sigma]], dtype=float),
        horizon=horizon,
        lipschitz_bound=max(abs(amplitude), abs(sigma), 1.0),
        ellipticity_bound=1.0 / abs(sigma),
        name=f"periodic_tilt(a={amplitude:g},period={period:g},sigma={sigma:g})",
        period=float(period),
    )


MODELS = {
    "brownian": brownian,
    "constant_drift": constant_drift,
    "ornstein_uhlenbeck": ornstein_uhlenbeck,
    "double_well": double_well,
    "periodic_tilt": periodic_tilt,
}

DEFAULT_DOMAINS = {
    "double_well": Domain.box([-2.0], [2.0]),
    "periodic_tilt": Domain.box([0.0], [1.0]),
}


def constant_field(value=1.0):
    return PerturbationField.constant(value)


def gaussian_bump(amplitude=1.0, center=0.0, width=0.5):
    """gamma(y) = amplitude * exp(-|y - center|^2 / (2 width^2)).

    Sup is |amplitude|; the Lipschitz constant is |amplitude| / (width sqrt(e)).
    """
    c = np.atleast_1d(np.asarray(center, dtype=float))

    def gamma(t, y):
        r2 = np.sum((y - c) ** 2, axis=-1, keepdims=True)
        return amplitude * np.exp(-0.5 * r2 / width**2)

    vn = abs(amplitude) * max(1.0, 1.0 / (width * np.sqrt(np.e)))
    return PerturbationField(
        gamma,
        name=f"bump(a={amplitude:g},c={float(c[0]):g},w={width:g})",
        v_norm_estimate=vn,
        is_zero=amplitude == 0,
    )


def time_linear(scale=1.0):
    """gamma(s, y) = scale * s, constant in space."""
    return PerturbationField(
        lambda t, y: scale * t,
        name=f"time_linear({scale:g})",
        is_zero=scale == 0,
    )


FIELDS = {
    "constant": constant_field,
    "gaussian_bump": gaussian_bump,
    "time_linear": time_linear,
}


def make_model(name, **params):
    try:
        factory = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**params)


def make_field(kind, **params):
    try:
        factory = FIELDS[kind]
    except KeyError:
        raise KeyError(f"unknown perturbation {kind!r}; choose from {sorted(FIELDS)}") from None
    return factory(**params)
