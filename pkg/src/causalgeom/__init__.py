"""Effective information and causal geometry for continuous Gaussian chains."""

from .channels import (
    ConstantIsotropic,
    DiagonalStateDependent,
    DiscretePoints,
    Domain,
    FullConstant,
    Gaussian,
    GaussianChannel,
    InvertedChannel,
    UniformBox,
    invert_uniform_prior,
    log_density,
    push_forward,
)
from .ei import (
    DensityEstimate,
    EIReport,
    MonteCarloSpec,
    QuadratureSpec,
    effect_distribution,
    ei_dimmer_approx,
    ei_exact_mc,
    ei_exact_quadrature,
    ei_geometric,
    intervention_volume,
)
from .errors import (
    CausalGeomError,
    DegenerateDistributionError,
    DegenerateEmbeddingError,
    DegenerateModelError,
    DegenerateProfileError,
    DomainViolationError,
    IllPosedInterventionsError,
    InvalidConfigError,
    NumericalFailureError,
    RegimeError,
    UnreachableParameterError,
    UseMonteCarloError,
)
from .geometry import (
    EigenReport,
    MetricField,
    ScalarField,
    SmoothMap,
    causal_eigenvalues,
    constant_metric,
    effect_metric,
    intervention_metric,
    mismatch,
    mismatch_at,
    reparameterize,
)
from .manifold import (
    Crossing,
    CrossoverScan,
    Submanifold,
    SweepSpec,
    coarse_grained_ei,
    crossover_scan,
    pullback,
    pullback_field,
)
from .models import (
    ChainModel,
    DecayConfounderConfig,
    DecayConfounderMetrics,
    DimmerProfile,
    TwoSpeciesConfig,
    antidiagonal_submanifold,
    binary_switch_model,
    decay_causal_channel,
    decay_confounder_metrics,
    diagonal_submanifold,
    dimmer_family,
    dimmer_model,
    family_profile,
    linear_profile,
    power_profile,
    two_species_model,
    weber_noise,
    weber_optimal_profile,
)

__version__ = "0.1.0"
