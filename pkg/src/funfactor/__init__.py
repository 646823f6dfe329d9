"""Bayesian sandwich factor models for longitudinal functional data.

Fits tensor-spline surface models with adaptively shrunk latent factor
decompositions by blocked Gibbs sampling, and turns posterior draws into
mean surfaces, covariance kernels, marginal covariances, eigenfunctions
with simultaneous credible bands, and model-selection criteria.
"""

from .criteria import CriteriaReport, compute_criteria
from .model import (
    FunctionalDataset,
    Hyperparameters,
    ModelState,
    SubjectRecord,
    draw_prior_state,
    init_state,
    log_likelihood,
    log_prior,
    omega,
)
from .posterior import (
    EigenSummary,
    FunctionBand,
    KernelGrid,
    MarginalCovariance,
    SummaryBundle,
    SummaryOptions,
    align_signs,
    covariance_kernel,
    eigen_decompose,
    marginalize,
    mean_surface,
    simultaneous_band,
    summarize,
)
from .sampler import (
    ChainConfig,
    ChainError,
    PosteriorDraws,
    run_chain,
    sample_truncated_gamma,
)
from .simgen import (
    ExperimentReport,
    FitConfig,
    GroundTruth,
    ScenarioSpec,
    empirical_estimates,
    generate,
    relative_error,
    run_experiment,
    run_selection_experiment,
    true_kernel,
    true_mean,
)
from .splines import BasisConfig, build_basis, eval_surface, tensor_row

__version__ = "0.1.0"
