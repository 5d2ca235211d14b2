"""Bayesian spatial change of support for count-valued survey data.

Fits a hierarchical Poisson model to design-based survey estimates and
their reported sampling variances on one or more areal supports, then
moves the fitted latent mean surface to arbitrary target supports through
polygon-overlap weights.
"""

__version__ = "0.1.0"

from .basis import (
    CovariateMatrix,
    MoranBasis,
    build_basis,
    givens_extract,
    givens_reconstruct,
    moran_basis,
    moran_operator,
    rank_from_positive_count,
)
from .covariance import (
    KIND_GAP,
    KIND_MI,
    CovarianceModel,
    GapParams,
    KMatrix,
    k_matrix,
    phi_from_gap,
)
from .data import SurveyDataset, SurveyLevel, read_survey_csv, write_survey_csv
from .errors import (
    ChecksumMismatchError,
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateGeometryError,
    JoinError,
    NonOrthogonalMatrixError,
    NonfiniteStateError,
    NumericalError,
    RankDeficiencyError,
    SurveyCosError,
)
from .geometry import (
    ArealSupport,
    ArealUnit,
    CosWeights,
    CoverageWarning,
    WeightMatrix,
    adjacency_from_boundaries,
    cos_weights,
    overlap_fraction,
    overlap_fraction_raster,
)
from .model import (
    Hyperparameters,
    LatentMeans,
    ModelState,
    ModelVariant,
    initial_state,
    latent_means,
    log_lik_counts,
    log_lik_variances,
    log_posterior,
    log_prior,
    sample_data,
)
from .sampler import GibbsSampler, SamplerConfig, gibbs_sweep, run_chain
from .draws import PosteriorDraws
from .inference import (
    CosResult,
    cos_posterior,
    pad,
    posterior_predictive_pvalue,
    simple_areal_interpolation,
)
from .diagnostics import ess, split_rhat, summarize_chains
from .simulate import (
    PseudoPopulation,
    SimulationDesign,
    StudyConfig,
    StudyResult,
    binomial_sign_test,
    default_strata,
    default_targets,
    generate_population,
    run_study,
    stratified_estimates,
    tile_support,
    true_means,
)
