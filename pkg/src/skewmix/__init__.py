"""Dirichlet-process mixtures of skew-normal kernels for densities and count data."""

from .metrics import (
    DensityGrid,
    default_grid,
    kl_divergence,
    l2_distance,
    occupied_cluster_posterior,
    trace_diagnostics,
)
from .mixture import (
    BaseMeasure,
    ChainConfig,
    ChainState,
    KernelFamily,
    PosteriorSummary,
    posterior_mean_density,
    run_chain,
)
from .rounded import (
    RoundingGrid,
    impute_latent,
    pmf_from_latent,
    posterior_mean_pmf,
    round_value,
    run_chain_discrete,
)
from .scenarios import ScenarioSpec, run_study, sample_scenario, true_density
from .skewnormal import (
    SkewNormalParams,
    SunConditional,
    owens_t,
    sn_cdf,
    sn_pdf,
    sn_quantile,
    sn_sample,
    sn_sf,
)

__version__ = "0.1.0"

__all__ = [
    "BaseMeasure",
    "ChainConfig",
    "ChainState",
    "DensityGrid",
    "KernelFamily",
    "PosteriorSummary",
    "RoundingGrid",
    "ScenarioSpec",
    "SkewNormalParams",
    "SunConditional",
    "default_grid",
    "impute_latent",
    "kl_divergence",
    "l2_distance",
    "occupied_cluster_posterior",
    "owens_t",
    "pmf_from_latent",
    "posterior_mean_density",
    "posterior_mean_pmf",
    "round_value",
    "run_chain",
    "run_chain_discrete",
    "run_study",
    "sample_scenario",
    "sn_cdf",
    "sn_pdf",
    "sn_quantile",
    "sn_sample",
    "sn_sf",
    "trace_diagnostics",
    "true_density",
]
