"""Goodness-of-fit tests for the functional linear model ``Y = <X, theta> + eps``.

The package provides functional PCA on a quadrature grid, Fisher-type tests
of ``theta = 0`` on a fixed number of principal directions, adaptive tests
over a dyadic collection of dimensions (Bonferroni or Monte-Carlo
calibrated), separation-rate calculators and a reproducible simulation
harness.
"""

__version__ = "0.1.0"

from .adaptive import (
    AdaptiveTestResult,
    CalibrationWeight,
    DimensionCollection,
    DimensionResult,
    adaptive_test,
    bonferroni_weight,
    dimension_collection,
    monte_carlo_weight,
    subspace_test,
)
from .fda import FpcaError, FpcaResult, FunctionalSample, Grid, center_sample, fpca, inner_product
from .flm import ParametricTestResult, akdelta_norm, build_projection, parametric_test, phi_statistic
from .numerics import (
    RngStream,
    chi2_upper_tail,
    fisher_density,
    fisher_upper_quantile,
    fisher_upper_tail,
    regularized_beta,
    regularized_gamma,
    sample_standard_normal,
)
from .simulation import (
    ExperimentPlan,
    ExperimentResult,
    ProcessSpec,
    SlopeSpec,
    bias_term,
    make_theta_g,
    make_theta_kl,
    run_experiment,
    simulate_design,
)
from .theory import (
    EllipsoidSpec,
    RateReport,
    adaptive_rate,
    check_assumption_B2,
    optimal_dimension,
    separation_rate,
)
