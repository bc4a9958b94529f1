"""Discrepancy-principle stopping: residuals, threshold, and root-finding.

The residual of the closed-form posterior mean is
R_tau = sum_i (1 - gamma_i(tau))^2 y_i^2, non-increasing in tau, so the
first crossing of the threshold kappa is found by bisection.  kappa is
calibrated as C * D / n (noise amplitude nu = 1 baked in; an estimated
nu^2 can be supplied as a multiplier).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .spectral import DiagonalModel, Observation
from .tikhonov import filter_complement, reparam_eigs

__all__ = [
    "StopConfig",
    "StopReport",
    "NonMonotoneResidualError",
    "residual",
    "make_kappa",
    "tau_dp",
    "k_dp",
]


class NonMonotoneResidualError(RuntimeError):
    """Residual trajectory increased where theory forbids it."""


@dataclass(frozen=True)
class StopConfig:
    """Threshold and bracket for the scale search."""

    kappa: float
    C: float = 1.0
    tau0: float = 0.0
    tau_max: float = 1e12
    tol: float = 1e-6

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"threshold kappa must be >= 0, got {self.kappa}")
        if self.tau0 < 0 or self.tau_max <= self.tau0:
            raise ValueError("require 0 <= tau0 < tau_max")

    @classmethod
    def from_counts(
        cls,
        D: int,
        n: int,
        C: float = 1.0,
        nu_sq: float = 1.0,
        tau0: float = 0.0,
        tau_max: float = 1e12,
        tol: float = 1e-6,
    ) -> "StopConfig":
        return cls(
            kappa=make_kappa(D, n, C, nu_sq=nu_sq),
            C=C,
            tau0=tau0,
            tau_max=tau_max,
            tol=tol,
        )


@dataclass(frozen=True)
class StopReport:
    """Stopping value, residual trajectory, and threshold used.

    ``stopped_at`` is the scale tau_dp for the continuous rule and the
    iteration index k_dp for the discrete one.  ``taus`` carries the scale
    at which each recorded residual was evaluated when that is meaningful.
    """

    stopped_at: float
    residuals: np.ndarray
    threshold: float
    converged: bool
    taus: Optional[np.ndarray] = None


def residual(obs: Observation, model: DiagonalModel, estimate: np.ndarray) -> float:
    """Data misfit sum_i (y_i - sigma_i estimate_i)^2."""
    est = np.asarray(estimate, dtype=float)
    if est.size != model.D or obs.y.size != model.D:
        raise ValueError(
            f"dimension mismatch: y has {obs.y.size}, estimate has {est.size}, "
            f"model D={model.D}"
        )
    return float(np.sum((obs.y - model.sigma * est) ** 2))


def make_kappa(D: int, n: int, C: float = 1.0, nu_sq: float = 1.0) -> float:
    """Discrepancy threshold kappa = C * D / n (times an optional nu^2)."""
    if not D >= 1:
        raise ValueError(f"dimension D must be >= 1, got {D}")
    if not n >= 1:
        raise ValueError(f"sample size n must be >= 1, got {n}")
    if not 0.0 < C <= 1.0:
        raise ValueError(f"threshold constant C must be in (0, 1], got {C}")
    if not nu_sq > 0:
        raise ValueError(f"noise multiplier nu_sq must be positive, got {nu_sq}")
    return C * D / n * nu_sq


def _closed_form_residual(y: np.ndarray, sig_t: np.ndarray, tau: float) -> float:
    one_minus = filter_complement(tau, sig_t)
    return float(np.sum(one_minus**2 * y**2))


def tau_dp(model: DiagonalModel, obs: Observation, config: StopConfig) -> StopReport:
    """Smallest tau in [tau0, tau_max] with R_tau <= kappa, by bisection.

    Exploits that R_tau is non-increasing in tau for the closed-form
    posterior mean.  If even R_{tau_max} > kappa the report carries
    converged=False with stopped_at = tau_max.  The recorded trajectory
    holds every probed (tau, residual), sorted by tau; a residual increase
    along it beyond rounding raises NonMonotoneResidualError.
    """
    sig_t = reparam_eigs(model)
    probes: list[tuple[float, float]] = []

    def R(tau: float) -> float:
        val = _closed_form_residual(obs.y, sig_t, tau)
        probes.append((tau, val))
        return val

    converged = True
    if R(config.tau0) <= config.kappa:
        stopped = config.tau0
    elif R(config.tau_max) > config.kappa:
        stopped = config.tau_max
        converged = False
    else:
        lo = max(config.tau0, 1e-9)
        if R(lo) <= config.kappa:
            # crossing lies below the smallest bracketable scale
            stopped = lo
        else:
            log_lo, log_hi = np.log(lo), np.log(config.tau_max)
            for _ in range(200):
                if log_hi - log_lo <= np.log1p(config.tol):
                    break
                mid = 0.5 * (log_lo + log_hi)
                if R(np.exp(mid)) <= config.kappa:
                    log_hi = mid
                else:
                    log_lo = mid
            stopped = float(np.exp(log_hi))

    probes.sort(key=lambda pair: pair[0])
    taus = np.array([p[0] for p in probes])
    resids = np.array([p[1] for p in probes])
    scale = max(resids.max(initial=0.0), 1.0)
    if np.any(np.diff(resids) > 1e-9 * scale):
        raise NonMonotoneResidualError(
            "residual trajectory increased along tau; numerical pathology"
        )
    return StopReport(
        stopped_at=float(stopped),
        residuals=resids,
        threshold=config.kappa,
        converged=converged,
        taus=taus,
    )


def k_dp(
    residual_stream: Iterable[float], kappa: float, k0: int = 0, k_max: int = 10**6
) -> StopReport:
    """First index k >= k0 whose residual is <= kappa, consumed lazily.

    The stream's first item is the residual at k = k0.  Exhausting the
    stream or reaching k_max without a crossing reports converged=False.
    """
    if k0 < 0 or k_max <= k0:
        raise ValueError("require 0 <= k0 < k_max")
    recorded = []
    it = iter(residual_stream)
    for k in range(k0, k_max):
        try:
            r = next(it)
        except StopIteration:
            return StopReport(
                stopped_at=k, residuals=np.array(recorded), threshold=kappa, converged=False
            )
        recorded.append(float(r))
        if r <= kappa:
            return StopReport(
                stopped_at=k, residuals=np.array(recorded), threshold=kappa, converged=True
            )
    return StopReport(
        stopped_at=k_max, residuals=np.array(recorded), threshold=kappa, converged=False
    )
