"""Multilevel Monte Carlo for small-noise SDEs and reaction networks.

The main entry points are :func:`mlmc_estimate` and
:func:`standard_mc_estimate` for E[f(D(T))], and the sweep functions in
:mod:`smallnoise_mlmc.experiments` for variance and cost scaling studies.
"""

from .errors import ConfigurationError, DivergedPathError, NoiseIdentityError, SimulationError
from .estimators import (
    Estimate,
    MlmcPlan,
    PilotVariances,
    allocate_levels,
    choose_depth,
    mlmc_estimate,
    pilot_variances,
    standard_mc_estimate,
)
from .models import (
    Observable,
    ReactionNetwork,
    SdeModel,
    diffusion_approx_model,
    example_dimerization,
    example_gbm_small_noise,
)
from .paths import (
    LevelGrid,
    coupled_euler_pair,
    coupled_tau_leap_pair,
    deterministic_euler,
    euler_path,
    tau_leap_path,
)
from .rng import RngStream
from .stats import MomentAccumulator, SlopeFit, loglog_fit

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DivergedPathError", "NoiseIdentityError", "SimulationError",
    "Estimate", "MlmcPlan", "PilotVariances", "allocate_levels", "choose_depth", "mlmc_estimate",
    "pilot_variances", "standard_mc_estimate",
    "Observable", "ReactionNetwork", "SdeModel", "diffusion_approx_model", "example_dimerization",
    "example_gbm_small_noise",
    "LevelGrid", "coupled_euler_pair", "coupled_tau_leap_pair", "deterministic_euler", "euler_path",
    "tau_leap_path",
    "RngStream", "MomentAccumulator", "SlopeFit", "loglog_fit",
]
