"""Deterministic ensemble Kalman iteration and its linear-Gaussian oracle.

One discrete step moves every member by half a Kalman-gain correction,

    theta_i <- theta_i - (1/2) K (G theta_i + Gbar - 2 y),
    K = dt * Chat (dt * S + I)^{-1},

with Chat and S the empirical cross and image covariances (1/(J-1)
normalisation) and Gbar the mean of the member images.  Iterating to time
t = k * dt tempers the initial ensemble law toward the posterior at prior
scale tau = sqrt(t); for linear G the exact mean and covariance flow is
available in closed form and is used as the validation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .stopping import StopReport

__all__ = [
    "Ensemble",
    "EnsembleMoments",
    "GainContext",
    "ClosedForm",
    "ForwardMap",
    "init_random",
    "init_exact",
    "empirical_moments",
    "kalman_gain",
    "enkf_step",
    "run_until_dp",
    "closed_form",
]

ForwardLike = Union[np.ndarray, Callable[[np.ndarray], np.ndarray], "ForwardMap"]


@dataclass(frozen=True)
class Ensemble:
    """J member vectors stored as rows of an (J, dim) array."""

    members: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 2 or m.shape[0] < 2:
            raise ValueError("ensemble needs a (J, dim) array with J >= 2")
        object.__setattr__(self, "members", m)

    @property
    def J(self) -> int:
        return self.members.shape[0]

    @property
    def dim(self) -> int:
        return self.members.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    @property
    def cov(self) -> np.ndarray:
        d = self.members - self.mean
        return d.T @ d / (self.J - 1)


@dataclass(frozen=True)
class EnsembleMoments:
    """Empirical first and second moments of members and their images."""

    member_mean: np.ndarray
    image_mean: np.ndarray
    cross_cov: np.ndarray
    image_cov: np.ndarray


@dataclass(frozen=True)
class GainContext:
    cross_cov: np.ndarray
    obs_cov: np.ndarray
    dt: float


@dataclass(frozen=True)
class ClosedForm:
    """Exact mean-field mean and covariance at time t for linear G."""

    mean_t: np.ndarray
    cov_t: np.ndarray
    t: float


class ForwardMap:
    """Normalises a forward operator to single and batch application.

    Accepts a 1-D array (diagonal spectrum), a 2-D array (dense matrix),
    or a pure callable mapping one parameter vector to one data vector.
    A callable exposing a ``batch`` attribute is used for whole-ensemble
    application; otherwise members are mapped one by one.
    """

    def __init__(self, op: ForwardLike):
        if isinstance(op, ForwardMap):
            self._single = op._single
            self._batch = op._batch
            return
        if isinstance(op, np.ndarray):
            if op.ndim == 1:
                spec = op.astype(float)
                self._single = lambda v: spec * v
                self._batch = lambda m: m * spec
            elif op.ndim == 2:
                mat = op.astype(float)
                self._single = lambda v: mat @ v
                self._batch = lambda m: m @ mat.T
            else:
                raise ValueError("forward array must be 1-D (spectrum) or 2-D (matrix)")
        elif callable(op):
            self._single = op
            batch = getattr(op, "batch", None)
            if batch is not None:
                self._batch = batch
            else:
                self._batch = lambda m: np.stack([np.asarray(op(row)) for row in m])
        else:
            raise TypeError(f"cannot interpret forward operator of type {type(op)!r}")

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(self._single(v), dtype=float)

    def batch(self, members: np.ndarray) -> np.ndarray:
        return np.asarray(self._batch(members), dtype=float)


def _cov_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric factor F with F F^T = cov; rejects negative eigenvalues."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 1:
        if np.any(cov < 0):
            raise ValueError("covariance spectrum has negative entries")
        return np.diag(np.sqrt(cov))
    sym = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(sym)
    tol = 1e-12 * max(1.0, float(w.max(initial=0.0)))
    if w.min() < -tol:
        raise ValueError(f"covariance is not positive semi-definite (min eig {w.min():.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def init_random(cov, J: int, seed) -> Ensemble:
    """J independent mean-zero Gaussian members with covariance cov."""
    if J < 2:
        raise ValueError(f"ensemble size J must be >= 2, got {J}")
    fac = _cov_factor(cov)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((J, fac.shape[1]))
    return Ensemble(members=z @ fac.T)


def _helmert_rows(J: int) -> np.ndarray:
    """Rows 1..J-1 of the Helmert orthogonal matrix: orthonormal, sum 0."""
    H = np.zeros((J - 1, J))
    for k in range(1, J):
        H[k - 1, :k] = 1.0 / np.sqrt(k * (k + 1))
        H[k - 1, k] = -k / np.sqrt(k * (k + 1))
    return H


def init_exact(cov_spectrum, J: int, basis: Optional[np.ndarray] = None) -> Ensemble:
    """Deterministic ensemble with exact empirical moments.

    The empirical mean is exactly zero and the empirical covariance
    (1/(J-1) normalisation) exactly diag(cov_spectrum), rotated by
    ``basis`` when given.  J = Dp + 1 uses the simplex construction from
    Helmert rows; J = 2 Dp uses symmetric pairs +/- c_i e_i.
    """
    spectrum = np.asarray(cov_spectrum, dtype=float)
    if spectrum.ndim != 1 or np.any(spectrum < 0):
        raise ValueError("cov_spectrum must be a 1-D non-negative array")
    Dp = spectrum.size
    if J == Dp + 1:
        V = _helmert_rows(J)  # (Dp, J), orthonormal rows orthogonal to 1
        members = (np.sqrt(J - 1) * (np.sqrt(spectrum)[:, None] * V)).T
    elif J == 2 * Dp and J >= 2:
        c = np.sqrt(spectrum * (J - 1) / 2.0)
        members = np.concatenate([np.diag(c), -np.diag(c)], axis=0)
    else:
        raise ValueError(
            f"exact initialisation for Dp={Dp} needs J in {{{Dp + 1}, {2 * Dp}}}, got {J}"
        )
    if basis is not None:
        members = members @ np.asarray(basis, dtype=float).T
    return Ensemble(members=members)


def empirical_moments(ensemble: Ensemble, images: np.ndarray) -> EnsembleMoments:
    """Means, cross covariance, and image covariance (1/(J-1))."""
    imgs = np.asarray(images, dtype=float)
    if imgs.shape[0] != ensemble.J:
        raise ValueError(f"need one image per member: J={ensemble.J}, got {imgs.shape[0]}")
    mm = ensemble.mean
    im = imgs.mean(axis=0)
    dm = ensemble.members - mm
    di = imgs - im
    norm = ensemble.J - 1
    return EnsembleMoments(
        member_mean=mm,
        image_mean=im,
        cross_cov=dm.T @ di / norm,
        image_cov=di.T @ di / norm,
    )


def kalman_gain(ctx: GainContext) -> np.ndarray:
    """K = dt * cross_cov (dt * obs_cov + I)^{-1} via an SPD solve."""
    if not ctx.dt > 0:
        raise ValueError(f"time step dt must be positive, got {ctx.dt}")
    dy = ctx.obs_cov.shape[0]
    system = ctx.dt * ctx.obs_cov + np.eye(dy)
    try:
        factor = cho_factor(system, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:  # cannot occur for PSD obs_cov
        raise np.linalg.LinAlgError(f"gain system not SPD: {exc}") from exc
    return ctx.dt * cho_solve(factor, ctx.cross_cov.T, check_finite=False).T


def _checked_images(fwd: ForwardMap, members: np.ndarray) -> np.ndarray:
    images = fwd.batch(members)
    bad = ~np.isfinite(images)
    if bad.any():
        idx = int(np.nonzero(bad.any(axis=tuple(range(1, images.ndim))))[0][0])
        raise FloatingPointError(f"forward map produced NaN/Inf for member {idx}")
    return images


def _step_with_images(
    ensemble: Ensemble, images: np.ndarray, y: np.ndarray, dt: float
) -> Ensemble:
    mom = empirical_moments(ensemble, images)
    K = kalman_gain(GainContext(cross_cov=mom.cross_cov, obs_cov=mom.image_cov, dt=dt))
    innovations = images + mom.image_mean - 2.0 * y
    return Ensemble(members=ensemble.members - 0.5 * innovations @ K.T)


def enkf_step(ensemble: Ensemble, forward: ForwardLike, y: np.ndarray, dt: float) -> Ensemble:
    """One deterministic half-gain update of every member."""
    if not dt > 0:
        raise ValueError(f"time step dt must be positive, got {dt}")
    fwd = ForwardMap(forward)
    images = _checked_images(fwd, ensemble.members)
    return _step_with_images(ensemble, images, np.asarray(y, dtype=float), dt)


def run_until_dp(
    ensemble: Ensemble,
    forward: ForwardLike,
    y: np.ndarray,
    kappa: float,
    dt: float,
    k_max: int,
) -> tuple[Ensemble, StopReport]:
    """Iterate enkf_step until the mean's data misfit drops to kappa.

    The residual R_k = ||G(mean_k) - y||^2 is evaluated before each step;
    the first k with R_k <= kappa stops the loop, identifying the time
    t = k * dt and the scale tau = sqrt(t).  Reaching k_max leaves
    converged=False and still returns the final ensemble.
    """
    if not kappa > 0:
        raise ValueError(f"threshold kappa must be positive, got {kappa}")
    if not dt > 0:
        raise ValueError(f"time step dt must be positive, got {dt}")
    if k_max < 0:
        raise ValueError(f"iteration cap k_max must be >= 0, got {k_max}")
    fwd = ForwardMap(forward)
    yv = np.asarray(y, dtype=float)
    residuals = []
    current = ensemble
    stopped_at = k_max
    converged = False
    for k in range(k_max + 1):
        # one batched forward pass covers the mean (residual) and the members
        stacked = fwd.batch(np.vstack([current.mean[None, :], current.members]))
        bad = ~np.isfinite(stacked)
        if bad.any():
            which = int(np.nonzero(bad.any(axis=1))[0][0])
            where = "ensemble mean" if which == 0 else f"member {which - 1}"
            raise FloatingPointError(f"forward map produced NaN/Inf for {where}")
        mean_image, images = stacked[0], stacked[1:]
        r = float(np.sum((mean_image - yv) ** 2))
        residuals.append(r)
        if r <= kappa:
            stopped_at = k
            converged = True
            break
        if k == k_max:
            break
        current = _step_with_images(current, images, yv, dt)
    resids = np.array(residuals)
    taus = np.sqrt(dt * np.arange(resids.size))
    report = StopReport(
        stopped_at=stopped_at,
        residuals=resids,
        threshold=float(kappa),
        converged=converged,
        taus=taus,
    )
    return current, report


def _as_matrix(op) -> np.ndarray:
    arr = np.asarray(op, dtype=float)
    if arr.ndim == 1:
        return np.diag(arr)
    if arr.ndim == 2:
        return arr
    raise ValueError("expected a 1-D spectrum or 2-D matrix")


def closed_form(C0, G, y: np.ndarray, t: float) -> ClosedForm:
    """Exact tempered mean and covariance at time t for linear G.

    mean_t = C0 G^T (G C0 G^T + I/t)^{-1} y
    cov_t  = C0 - C0 G^T (G C0 G^T + I/t)^{-1} G C0

    Deliberately computed through dense symmetric solves, independent of
    the component-wise posterior formulas it is checked against.
    """
    if not t > 0:
        raise ValueError(f"time t must be positive, got {t}")
    C0m = _as_matrix(C0)
    Gm = _as_matrix(G)
    yv = np.asarray(y, dtype=float)
    dy = Gm.shape[0]
    S = Gm @ C0m @ Gm.T + np.eye(dy) / t
    factor = cho_factor(0.5 * (S + S.T), lower=True)
    K = (cho_solve(factor, Gm @ C0m)).T  # C0 G^T S^{-1}
    mean = K @ yv
    cov = C0m - K @ Gm @ C0m
    return ClosedForm(mean_t=mean, cov_t=0.5 * (cov + cov.T), t=float(t))
