"""Drift sensitivity of SDE path expectations and transfer operators."""
from .exceptions import (
    ConfigError,
    ConvergenceError,
    DegenerateEigenvalueError,
    DegenerateEigenvalueWarning,
    DomainError,
    DriftSensError,
    EstimationError,
    ExplosionError,
    IllConditionedDiffusionError,
    InadmissibleObservableError,
    InconclusiveFitError,
    ResolutionError,
    WeightOverflowError,
)
from .girsanov import (
    GirsanovSeries,
    exponential_martingale,
    girsanov_series,
    ito_weight,
    quadratic_variation,
    reweighted_expectation,
)
from .observables import MCEstimate, Observable, marginal, mc_estimate, path_functional
from .sde import (
    Domain,
    PathEnsemble,
    PerturbationField,
    SdeModel,
    TimeGrid,
    estimate_v_norm,
    reflect_into_domain,
    simulate_ensemble,
    simulate_path,
    validate_model,
)
from .sensitivity import (
    GirsanovSensitivity,
    derivative_continuity_scan,
    finite_difference_derivative,
    frechet_derivative,
    quadratic_decay_fit,
    remainder,
)
from .spectral import (
    eigenpairs,
    eigenvalue_response,
    ergodic_average,
    periodic_stationary_family,
    singular_triplets,
    singular_value_response,
)
from .ulam import (
    UlamEstimator,
    UlamGrid,
    assemble_operators,
    build_grid,
    estimate_kernel,
    kernel_derivative,
    operator_norm_residual,
    spectral_norm,
)

__version__ = "0.1.0"
