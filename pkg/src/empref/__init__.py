"""Empirical Bayes prior estimation by maximum penalized marginal likelihood."""

__version__ = "0.1.0"

from .errors import ConfigError, EmprefError, NumericalError  # noqa: E402
from .estimation import (  # noqa: E402
    EstimationResult,
    SolverConfig,
    em_npmle,
    objective_and_gradient,
    solve_mple,
)
from .grid import (  # noqa: E402
    Grid,
    GridDensity,
    integrate,
    kl_divergence,
    make_nonuniform_grid,
    make_uniform_grid,
    neg_entropy,
    normalize,
    pushforward_density,
    tv_distance,
)
from .harness import (  # noqa: E402
    InvarianceReport,
    run_invariance_experiment,
    run_restriction_experiment,
    run_two_point_demo,
)
from .information import (  # noqa: E402
    PenaltySpec,
    expected_information,
    expected_information_replicated,
    fisher_information,
    information_curve_two_point,
    jeffreys_prior,
    penalty_missing_info,
    penalty_tikhonov,
)
from .models import (  # noqa: E402
    Dataset,
    Diffeomorphism,
    GaussianLocationModel,
    LikelihoodModel,
    TwoPointModel,
    bimodal_truth,
    log_marginal_likelihood,
    marginal_density,
    sample_dataset,
    transform_dataset,
    transform_model,
)
from .selection import CrossValReport, loo_cross_validate  # noqa: E402
