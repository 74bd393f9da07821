"""Gamma-mixture density estimation for positive channel-power data.

Two fitters share one output type: a finite-mixture EM with
moment-matching updates, and a truncated Dirichlet-process mixture
whose posterior is simulated with a self-tuning Hamiltonian sampler.
"""

from .dpgmm import (
    HyperPriors,
    LatentState,
    PosteriorTarget,
    UnconstrainedState,
    grad_log_posterior,
    log_likelihood,
    log_posterior_unnormalized,
    log_prior,
    stick_break,
    unconstrain,
)
from .em import EmOptions, FitResult, e_step, fit_em, kmeans_init, m_step
from .errors import (
    ComparisonError,
    DataError,
    DomainError,
    FitError,
    InitializationError,
    SamplerInitError,
    SchemaError,
)
from .evaluation import ComparisonTable, FitReport, compare, component_trace, kl_divergence
from .mixture import GammaComponent, MixtureModel, effective_components, mixture_log_pdf, sample
from .pipeline import (
    EmpiricalPdf,
    PowerSamples,
    S21Record,
    SyntheticData,
    build_empirical_pdf,
    load_power_csv,
    load_s21_csv,
    load_samples,
    s21_to_power,
    synth_generate,
)
from .sampler import (
    DiagnosticsResult,
    DpgmmFit,
    PosteriorSummary,
    SamplerConfig,
    Trace,
    diagnostics,
    fit_dpgmm,
    nuts_sample,
    rwm_sample,
    summarize,
)

__version__ = "0.1.0"
