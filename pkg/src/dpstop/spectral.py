"""Diagonal sequence-space model: spectra, test signals, synthetic data.

All spectral formulas use the 1-based index i = 1..D of the mathematical
model; arrays are stored 0-based, so entry ``a[k]`` carries the value for
i = k + 1.  That convention is applied here once and relied on everywhere
else in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiagonalModel",
    "Signal",
    "Observation",
    "make_model",
    "truncation_dim",
    "sobolev_norm_sq",
    "test_signal",
    "generate_observation",
]

#: margin added to the power-law exponent so the declared Sobolev norm of a
#: ``power`` signal stays finite as the dimension grows
POWER_LAW_MARGIN = 0.01


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    out.flags.writeable = False
    return out


def indices(D: int) -> np.ndarray:
    """The 1-based spectral indices [1, 2, ..., D] as floats."""
    return np.arange(1, D + 1, dtype=float)


@dataclass(frozen=True)
class DiagonalModel:
    """Forward operator and prior spectra on a D-dimensional truncation.

    sigma[k] = (k+1)^{-p} are the operator singular values and
    lam[k] = (k+1)^{-1-2*alpha} the prior eigenvalues; both strictly
    positive and non-increasing.  Proportionality constants are fixed to 1.
    """

    p: float
    alpha: float
    D: int
    sigma: np.ndarray
    lam: np.ndarray


@dataclass(frozen=True)
class Signal:
    """Coefficient sequence with a declared Sobolev regularity.

    ``coeffs`` are coefficients in the eigenbasis of the forward operator.
    Whether they describe the original parameter or its whitened version
    is the caller's choice; the object only stores one declared regularity
    and the matching ball radius.
    """

    coeffs: np.ndarray
    declared_beta: float
    radius: float


@dataclass(frozen=True)
class Observation:
    """Truncated data vector y with sample size n and noise amplitude nu.

    The effective noise level is delta = nu / sqrt(n).
    """

    y: np.ndarray
    n: int
    nu: float
    seed: int

    @property
    def delta(self) -> float:
        return self.nu / np.sqrt(self.n)


def make_model(p: float, alpha: float, D: int) -> DiagonalModel:
    """Build the diagonal model with sigma_i = i^-p, lambda_i = i^{-1-2a}."""
    if not p > 0:
        raise ValueError(f"ill-posedness degree p must be positive, got {p}")
    if not alpha > 0:
        raise ValueError(f"prior smoothness alpha must be positive, got {alpha}")
    if not (isinstance(D, (int, np.integer)) and D >= 1):
        raise ValueError(f"truncation dimension D must be an integer >= 1, got {D}")
    i = indices(D)
    return DiagonalModel(
        p=float(p),
        alpha=float(alpha),
        D=int(D),
        sigma=_frozen(i ** (-p)),
        lam=_frozen(i ** (-1.0 - 2.0 * alpha)),
    )


def truncation_dim(n: int, p: float) -> int:
    """Truncation dimension D(n) = ceil(n^{1/(2p+1)}), capped at n.

    The cap matters only for tiny n; the exponent depends on the operator
    smoothness alone, so no knowledge of the signal regularity is needed.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError(f"sample size n must be an integer >= 1, got {n}")
    if not p > 0:
        raise ValueError(f"ill-posedness degree p must be positive, got {p}")
    raw = float(n) ** (1.0 / (2.0 * p + 1.0))
    nearest = round(raw)
    # guard against 32.000000000000004-style float noise on exact powers
    if abs(raw - nearest) < 1e-9 * max(1.0, nearest):
        d = int(nearest)
    else:
        d = int(np.ceil(raw))
    return max(1, min(d, int(n)))


def sobolev_norm_sq(coeffs: np.ndarray, beta: float) -> float:
    """Squared Sobolev norm sum_i i^{2 beta} coeffs_i^2 (1-based i)."""
    if beta < 0:
        raise ValueError(f"regularity beta must be >= 0, got {beta}")
    c = np.asarray(coeffs, dtype=float)
    i = indices(c.size)
    return float(np.sum(i ** (2.0 * beta) * c**2))


def test_signal(kind: str, D: int, beta: float = 1.0, scale: float = 1.0) -> Signal:
    """Construct one of the reference ground-truth signals.

    kind = "rough":  coeffs_i = 5 sin(0.5 i) / i
    kind = "smooth": coeffs_i = 5 exp(-i)
    kind = "power":  coeffs_i = scale * i^{-(beta + 0.5 + 0.01)}; the 0.01
    margin keeps the declared-beta Sobolev norm summable.
    """
    if D < 1:
        raise ValueError(f"dimension D must be >= 1, got {D}")
    i = indices(D)
    if kind == "rough":
        coeffs = 5.0 * np.sin(0.5 * i) / i
    elif kind == "smooth":
        coeffs = 5.0 * np.exp(-i)
    elif kind == "power":
        coeffs = scale * i ** (-(beta + 0.5 + POWER_LAW_MARGIN))
    else:
        raise ValueError(f"unknown signal kind {kind!r}; use rough, smooth, or power")
    radius = np.sqrt(sobolev_norm_sq(coeffs, beta))
    return Signal(coeffs=_frozen(coeffs), declared_beta=float(beta), radius=float(radius))


test_signal.__test__ = False  # name collides with pytest collection


def generate_observation(
    model: DiagonalModel, signal: Signal, n: int, nu: float, seed: int
) -> Observation:
    """Draw y_i = sigma_i theta_i + (nu/sqrt(n)) g_i with seeded N(0,1) g_i.

    Identical (seed, D, n) give bit-identical output; PCG64 is the
    generator, but any deterministic high-quality 64-bit generator would
    satisfy the contract.
    """
    if signal.coeffs.size != model.D:
        raise ValueError(
            f"signal dimension {signal.coeffs.size} does not match model D={model.D}"
        )
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError(f"sample size n must be an integer >= 1, got {n}")
    if not nu > 0:
        raise ValueError(f"noise amplitude nu must be positive, got {nu}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(model.D)
    y = model.sigma * signal.coeffs + (nu / np.sqrt(n)) * noise
    return Observation(y=_frozen(y), n=int(n), nu=float(nu), seed=int(seed))
