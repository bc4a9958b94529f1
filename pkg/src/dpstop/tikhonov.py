"""Closed-form conjugate posterior, spectral filter, bias/variance, rates.

The prior scale tau enters through the filter time t = tau^2: component i
of the posterior mean is gamma_i(tau) * y_i / sigma_i with filter
gamma_i = (1 + (tau sigma~_i)^-2)^-1, where sigma~_i = sigma_i sqrt(lambda_i)
are the singular values of the whitened forward operator.  The posterior
variance follows the convention delta^2 = nu^2 / n: per component it is
(1/n) tau^2 lambda_i / (1 + tau^2 lambda_i sigma_i^2), the honest conjugate
spread for noise level delta (with nu = 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import DiagonalModel, Observation, Signal

__all__ = [
    "PosteriorSummary",
    "BiasVariance",
    "RateFormulas",
    "OracleTimes",
    "reparam_eigs",
    "filter_gamma",
    "filter_complement",
    "posterior",
    "bias_variance",
    "oracle_times",
    "rate_formulas",
    "trace_posterior_cov",
]


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-component posterior mean and variance at prior scale tau."""

    tau: float
    mean: np.ndarray
    var: np.ndarray
    trace_cov: float


@dataclass(frozen=True)
class BiasVariance:
    """Squared bias and variance of the tau-indexed estimator family.

    The weak versions measure the error after applying the forward
    operator (prediction norm); they do not depend on the coefficient
    space the strong versions were requested in.
    """

    bias_sq: float
    variance: float
    weak_bias_sq: float
    weak_variance: float


@dataclass(frozen=True)
class RateFormulas:
    """Exponents of n for the optimal scale, the MSE rate, and the
    stopping-time lower bound (the latter on the t = tau^2 scale)."""

    optimal_tau_exponent: float
    mse_rate_exponent: float
    tau_lo_exponent: float


@dataclass(frozen=True)
class OracleTimes:
    """First scales at which (weak) bias drops below (weak) variance."""

    tau_weak: float
    tau_strong: float
    weak_crossed: bool
    strong_crossed: bool


def reparam_eigs(model: DiagonalModel) -> np.ndarray:
    """Singular values sigma~_i = sigma_i sqrt(lambda_i) of the whitened operator."""
    return model.sigma * np.sqrt(model.lam)


def filter_gamma(tau, sigma_tilde):
    """Tikhonov shrinkage factor gamma = (1 + (tau sigma~)^-2)^-1.

    Evaluated as x/(1+x) with x = (tau sigma~)^2, which extends
    continuously to 0 at tau = 0.  Accepts scalars or arrays.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("prior scale tau must be >= 0")
    x = (tau * np.asarray(sigma_tilde, dtype=float)) ** 2
    return x / (1.0 + x)


def filter_complement(tau, sigma_tilde):
    """1 - gamma evaluated as 1/(1 + (tau sigma~)^2), exact for large tau.

    Forming 1 - filter_gamma cancels to exactly zero once gamma rounds to
    1; residuals and bias terms use this complement instead so they stay
    strictly positive over the whole bracket.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("prior scale tau must be >= 0")
    x = (tau * np.asarray(sigma_tilde, dtype=float)) ** 2
    return 1.0 / (1.0 + x)


def posterior(model: DiagonalModel, obs: Observation, tau: float) -> PosteriorSummary:
    """Conjugate Gaussian posterior summary at prior scale tau.

    mean_i = tau^2 lambda_i sigma_i y_i / (1 + tau^2 lambda_i sigma_i^2)
    var_i  = (1/n) tau^2 lambda_i / (1 + tau^2 lambda_i sigma_i^2)

    The denominator carries sigma_i^2 (forced by Gaussian conjugacy).
    """
    if tau < 0:
        raise ValueError(f"prior scale tau must be >= 0, got {tau}")
    if obs.y.size != model.D:
        raise ValueError(
            f"observation dimension {obs.y.size} does not match model D={model.D}"
        )
    t = tau * tau
    denom = 1.0 + t * model.lam * model.sigma**2
    mean = t * model.lam * model.sigma * obs.y / denom
    var = t * model.lam / denom / obs.n
    return PosteriorSummary(
        tau=float(tau), mean=mean, var=var, trace_cov=float(np.sum(var))
    )


def _space_terms(model: DiagonalModel, signal: Signal, space: str):
    """Coefficients and operator singular values in the requested space.

    space="theta_tilde" whitens: c_i = coeffs_i / sqrt(lambda_i) and the
    operator has singular values sigma~_i; space="theta" keeps coeffs and
    sigma.  In both cases the estimator family is the same Tikhonov
    filter, so gamma is always built from sigma~.
    """
    if space == "theta":
        return signal.coeffs, model.sigma
    if space == "theta_tilde":
        return signal.coeffs / np.sqrt(model.lam), reparam_eigs(model)
    raise ValueError(f"unknown space {space!r}; use 'theta' or 'theta_tilde'")


def bias_variance(
    model: DiagonalModel,
    signal: Signal,
    tau: float,
    delta: float,
    space: str = "theta_tilde",
) -> BiasVariance:
    """Exact squared bias and variance of the filter estimator at scale tau.

    With gamma_i = filter_gamma(tau, sigma~_i) and (c_i, s_i) the
    coefficients and singular values in the requested space:

        bias_sq       = sum (1-gamma_i)^2 c_i^2
        variance      = delta^2 sum gamma_i^2 / s_i^2
        weak_bias_sq  = sum (1-gamma_i)^2 s_i^2 c_i^2
        weak_variance = delta^2 sum gamma_i^2

    so that bias_sq + variance is exactly the MSE E||est - truth||^2 in
    that space.  The weak pair is identical for both spaces because
    s_i c_i is the noiseless data in either parametrization.
    """
    if tau < 0:
        raise ValueError(f"prior scale tau must be >= 0, got {tau}")
    if not delta > 0:
        raise ValueError(f"noise level delta must be positive, got {delta}")
    c, s = _space_terms(model, signal, space)
    sig_t = reparam_eigs(model)
    gamma = filter_gamma(tau, sig_t)
    one_minus = filter_complement(tau, sig_t)
    return BiasVariance(
        bias_sq=float(np.sum(one_minus**2 * c**2)),
        variance=float(delta**2 * np.sum((gamma / s) ** 2)),
        weak_bias_sq=float(np.sum(one_minus**2 * (s * c) ** 2)),
        weak_variance=float(delta**2 * np.sum(gamma**2)),
    )


def _first_crossing(
    diff, tau0: float, tau_max: float, tol: float, max_iter: int = 200
) -> tuple[float, bool]:
    """Smallest tau in [tau0, tau_max] with diff(tau) <= 0, by bisection.

    Relies on diff being non-increasing (bias falls, variance grows).
    Returns (tau_max, False) when there is no crossing in the bracket.
    """
    if diff(tau0) <= 0.0:
        return tau0, True
    if diff(tau_max) > 0.0:
        return tau_max, False
    lo = max(tau0, 1e-12)
    log_lo, log_hi = np.log(lo), np.log(tau_max)
    for _ in range(max_iter):
        if log_hi - log_lo <= np.log1p(tol):
            break
        mid = 0.5 * (log_lo + log_hi)
        if diff(np.exp(mid)) <= 0.0:
            log_hi = mid
        else:
            log_lo = mid
    return float(np.exp(log_hi)), True


def oracle_times(
    model: DiagonalModel,
    signal: Signal,
    delta: float,
    space: str = "theta_tilde",
    tau0: float = 0.0,
    tau_max: float = 1e12,
    tol: float = 1e-6,
) -> OracleTimes:
    """Weak and strong balancing scales of the tau-indexed family.

    tau_weak is the first tau with weak_bias_sq <= weak_variance and
    tau_strong the first with bias_sq <= variance, each found by bisection
    on [tau0, tau_max] with relative tolerance tol.  A time that never
    crosses inside the bracket is reported as tau_max with its flag
    cleared rather than silently clamped.
    """
    if not np.any(signal.coeffs != 0.0):
        # zero signal has zero bias everywhere; both infima sit at tau0
        return OracleTimes(tau0, tau0, True, True)
    c, s = _space_terms(model, signal, space)
    sig_t = reparam_eigs(model)

    def diff_strong(tau):
        g = filter_gamma(tau, sig_t)
        om = filter_complement(tau, sig_t)
        return np.sum(om**2 * c**2) - delta**2 * np.sum((g / s) ** 2)

    def diff_weak(tau):
        g = filter_gamma(tau, sig_t)
        om = filter_complement(tau, sig_t)
        return np.sum(om**2 * (s * c) ** 2) - delta**2 * np.sum(g**2)

    tau_w, ok_w = _first_crossing(diff_weak, tau0, tau_max, tol)
    tau_s, ok_s = _first_crossing(diff_strong, tau0, tau_max, tol)
    return OracleTimes(tau_w, tau_s, ok_w, ok_s)


def rate_formulas(p: float, alpha: float, beta: float) -> RateFormulas:
    """Theoretical exponents of n in the regime beta < 2 alpha + 2p + 1.

    optimal_tau_exponent: scaling of the oracle-balancing tau.
    mse_rate_exponent: decay of the stopped estimator's mean squared error.
    tau_lo_exponent: growth of the stopping-time lower bound, stated for
    the time variable t = tau^2 (the scale on which the bound and the
    optimal t share a constant ratio).
    """
    if not (p > 0 and alpha > 0 and beta >= 0):
        raise ValueError("require p > 0, alpha > 0, beta >= 0")
    limit = 2.0 * alpha + 2.0 * p + 1.0
    if beta >= limit:
        raise ValueError(
            f"beta={beta} is out of regime: need beta < 2*alpha + 2*p + 1 = {limit}"
        )
    return RateFormulas(
        optimal_tau_exponent=(2 * p + 1 + 2 * alpha) / (4 * beta + 4 * p + 4 + 4 * alpha),
        mse_rate_exponent=-4.0 * beta / (2 * beta + 2 * p + 2 * alpha + 2),
        tau_lo_exponent=(2 * p + 1 + 2 * alpha) / (2 * beta + 2 * p + 2 + 2 * alpha),
    )


def trace_posterior_cov(model: DiagonalModel, tau: float, n: int) -> float:
    """Trace of the posterior covariance at scale tau and sample size n."""
    if tau < 0:
        raise ValueError(f"prior scale tau must be >= 0, got {tau}")
    if not n >= 1:
        raise ValueError(f"sample size n must be >= 1, got {n}")
    t = tau * tau
    return float(np.sum(t * model.lam / (1.0 + t * model.lam * model.sigma**2)) / n)
