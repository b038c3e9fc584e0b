"""Infinite urn schemes: occupancy growth, exponent estimation, and
empirical-bridge homogeneity tests.

The package simulates streams of labels drawn from heavy-tailed urn laws,
tracks the forward and backward distinct-count processes, estimates the
regular-variation exponent from them, and tests stream homogeneity with a
quadratic bridge statistic whose null distribution is available both by Monte
Carlo tabulation and through operator eigenvalues (Smirnov's formula).
"""

from .urn_model import (
    ProbabilityLaw,
    Stream,
    OccupancyPath,
    zipf_law,
    law_from_probs,
    tail_safe_truncation,
    heavy_urn_count,
    sample_stream,
    forward_counts,
    backward_counts,
    exact_mean_occupancy,
    poisson_mean_occupancy,
    poissonized_occupancy_cov,
    occupancy_checkpoints,
    poissonized_checkpoints,
    read_stream,
    write_stream,
)
from .estimation import (
    StepMeasure,
    ThetaEstimate,
    validate_measure,
    example1_measure,
    theta_estimator,
    theta_example1,
    estimator_asym_variance,
)
from .gaussian_limit import (
    KernelGrid,
    KernelGridError,
    LimitSample,
    cov_kernel,
    cross_cov_kernel,
    bridged_cov_kernel,
    bridged_cross_cov_kernel,
    build_kernel_grid,
    gp_simulate,
    make_limit_grid,
    limit_w2_sample,
    limit_w2_mean,
    mc_cdf,
    mc_p_value,
)
from .spectral_cdf import (
    SpectralModel,
    SpectralDeclined,
    nystrom_eigs,
    smirnov_cdf,
    spectral_p_value,
)
from .bridge_tests import (
    BridgePath,
    TestReport,
    empirical_bridge,
    w2_statistic,
    run_known_theta_test,
    run_estimated_theta_test,
    MonteCarloBackend,
    SpectralBackend,
    AutoBackend,
)

__version__ = "0.1.0"
