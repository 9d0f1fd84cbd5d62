"""Null controls, Girsanov weights and Monte Carlo derivatives of linear-SDE semigroups."""

from .config import SystemConfig, builtin_config, builtin_system, load_config
from .control import (
    ControlKernel,
    ControllabilityReport,
    ScalingFit,
    build_control,
    control_operator_norm,
    half_interval_control,
    invertible_b_control,
    kalman_rank,
    minimal_energy_control,
    scaling_fit,
    verify_null_drive,
)
from .estimate import (
    EstimateReport,
    equivalence_diagnostic,
    estimate_derivative,
    estimate_semigroup,
    estimate_semigroup_girsanov,
    finite_difference_check,
    gradient_decay,
    oracle_derivative,
    oracle_semigroup,
)
from .functions import TestFunction
from .model import GaussianMoments, LinearSystem, TimeGrid, gramian, semigroup, transition_moments
from .paths import ExactTerminalSampler, PathBundle, TerminalSample, exact_terminal_sampler, sample_path
from .weights import WeightSet, compute_J, girsanov_density, ito_I, nfold, wick_weight

__version__ = "0.1.0"
