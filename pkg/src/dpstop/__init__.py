"""Discrepancy-principle early stopping for Bayesian linear inverse problems.

The library works with diagonal sequence-space models (a compact forward
operator and a Gaussian prior sharing one eigenbasis).  It provides the
closed-form conjugate posterior indexed by the prior scale tau, the
residual-based stopping rule that picks tau from data, a deterministic
ensemble Kalman iteration that reaches the same posterior through an
artificial time t = tau^2, and Monte Carlo studies that check the rate,
stopping-time, contraction, and coverage behaviour at desk scale.  A 1-D
periodic Schrodinger problem extends the ensemble solver to a nonlinear
forward map.
"""

from .spectral import (
    DiagonalModel,
    Observation,
    Signal,
    generate_observation,
    make_model,
    sobolev_norm_sq,
    test_signal,
    truncation_dim,
)
from .tikhonov import (
    BiasVariance,
    OracleTimes,
    PosteriorSummary,
    RateFormulas,
    bias_variance,
    filter_complement,
    filter_gamma,
    oracle_times,
    posterior,
    rate_formulas,
    reparam_eigs,
    trace_posterior_cov,
)
from .stopping import (
    NonMonotoneResidualError,
    StopConfig,
    StopReport,
    k_dp,
    make_kappa,
    residual,
    tau_dp,
)
from .enkf import (
    ClosedForm,
    Ensemble,
    EnsembleMoments,
    GainContext,
    closed_form,
    empirical_moments,
    enkf_step,
    init_exact,
    init_random,
    kalman_gain,
    run_until_dp,
)

__version__ = "0.1.0"

__all__ = [
    "DiagonalModel",
    "Observation",
    "Signal",
    "generate_observation",
    "make_model",
    "sobolev_norm_sq",
    "test_signal",
    "truncation_dim",
    "BiasVariance",
    "OracleTimes",
    "PosteriorSummary",
    "RateFormulas",
    "bias_variance",
    "filter_complement",
    "filter_gamma",
    "oracle_times",
    "posterior",
    "rate_formulas",
    "reparam_eigs",
    "trace_posterior_cov",
    "NonMonotoneResidualError",
    "StopConfig",
    "StopReport",
    "k_dp",
    "make_kappa",
    "residual",
    "tau_dp",
    "ClosedForm",
    "Ensemble",
    "EnsembleMoments",
    "GainContext",
    "closed_form",
    "empirical_moments",
    "enkf_step",
    "init_exact",
    "init_random",
    "kalman_gain",
    "run_until_dp",
    "__version__",
]
