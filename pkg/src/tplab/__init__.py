"""Numerical laboratory for transition path processes of overdamped
diffusions on model landscapes.

Provides exact and parametric committor models, transition-path sampling
with path-functional accumulation, a computable change of measure between
exact and model transition-path laws, relative-entropy model comparison,
and stochastic-gradient training of committor families.
"""

from ._core import BACKEND as kernel_backend  # noqa: F401
from .committor import (
    Basis,
    CommittorModel,
    evaluate,
    evaluate_many,
    with_theta,
)
from .divergence import bar_ratio, entropy_term, oracle_kl, select
from .errors import AssumptionViolation, ConfigError, NumericError, TplabError
from .integrator import (
    FluxSampler,
    PathRecord,
    TppEnsemble,
    harvest_equilibrium,
    harvest_reactive,
    reactive_flux_sampler,
    replay_path,
    sample_reactive_flux,
    sample_tpp_ensemble,
    segment_durations,
    simulate_langevin,
    simulate_tpp,
)
from .model import (
    PotentialModel,
    RegionGeometry,
    make_double_well_1d,
    make_double_well_2d,
    make_flat,
    make_quadratic_well,
)
from .oracle import exact_committor_1d, exact_committor_2d
from .reweight import (
    alternative_integral,
    importance_estimate,
    log_weight,
    martingale_check,
    weight_ensemble,
)
from .rng import path_generator
from .train import (
    TrainConfig,
    TrainState,
    flux_theta,
    grad_log_mass,
    gradient_estimate,
    sgd_train,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation",
    "Basis",
    "CommittorModel",
    "ConfigError",
    "FluxSampler",
    "NumericError",
    "PathRecord",
    "PotentialModel",
    "RegionGeometry",
    "TplabError",
    "TppEnsemble",
    "TrainConfig",
    "TrainState",
    "alternative_integral",
    "bar_ratio",
    "entropy_term",
    "evaluate",
    "evaluate_many",
    "exact_committor_1d",
    "exact_committor_2d",
    "flux_theta",
    "grad_log_mass",
    "gradient_estimate",
    "harvest_equilibrium",
    "harvest_reactive",
    "importance_estimate",
    "kernel_backend",
    "log_weight",
    "make_double_well_1d",
    "make_double_well_2d",
    "make_flat",
    "make_quadratic_well",
    "martingale_check",
    "oracle_kl",
    "path_generator",
    "reactive_flux_sampler",
    "replay_path",
    "sample_reactive_flux",
    "sample_tpp_ensemble",
    "segment_durations",
    "select",
    "sgd_train",
    "simulate_langevin",
    "simulate_tpp",
    "weight_ensemble",
    "with_theta",
    "__version__",
]
