"""Monte Carlo studies: rate, stopping time, contraction, coverage, demos.

Every study is a pure function of its config: per-run generator seeds are
derived from (config seed, grid point, replicate), so the emitted rows are
byte-reproducible and independent of execution order.  CSV files use
RFC-4180 quoting with one header row; booleans are written as 0/1.
"""

from __future__ import annotations

import csv
import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import schrodinger as schro
from .enkf import Ensemble, init_random, run_until_dp
from .spectral import Signal, generate_observation, make_model, test_signal, truncation_dim
from .stopping import StopConfig, make_kappa, tau_dp
from .tikhonov import posterior, rate_formulas, trace_posterior_cov

__all__ = [
    "StudyConfig",
    "SchrodingerConfig",
    "StudyReport",
    "rate_study",
    "stopping_time_study",
    "contraction_study",
    "coverage_study",
    "linear_demo",
    "nonlinear_demo",
    "enkf_run",
    "write_csv",
]

#: fraction of the smallest observed stopping-time ratio used as the fitted
#: lower-bound constant in the stopping-time study
C0_FIT_MARGIN = 0.5

#: exponent of the per-level time-step growth used when no dt list is given
#: (matches how the demo's stopping time scales as the noise level drops)
DEMO_DT_GROWTH = 8.0 / 3.0


@dataclass
class StudyConfig:
    """Configuration shared by the linear studies and demos.

    Defaults are the package-wide reference configuration; every field is
    overridable from the CLI config file.
    """

    p: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    n_grid: list = field(default_factory=lambda: [2**8, 2**10, 2**12, 2**14, 2**16])
    replicates: int = 50
    C: float = 1.0
    seed: int = 0
    signal_kind: str = "power"
    output_path: str = ""
    signal_scale: float = 1.0
    beta_prime: Optional[float] = None
    credible_draws: int = 10000
    credible_level: float = 0.95
    drop_first: bool = False
    tau_max: float = 1e12
    noise_levels: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    dt_list: Optional[list] = None
    base_dt: float = 20.0
    ensemble_size: int = 100
    k_max: int = 3000
    demo_dim: int = 100
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        grid = list(self.n_grid)
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"n_grid must be strictly increasing, got {grid}")
        if self.dt_list is not None and len(self.dt_list) != len(self.noise_levels):
            raise ValueError("dt_list must align one step size with each noise level")

    def demo_dt(self, level_index: int) -> float:
        if self.dt_list is not None:
            return float(self.dt_list[level_index])
        ratio = self.noise_levels[0] / self.noise_levels[level_index]
        return self.base_dt * ratio**DEMO_DT_GROWTH


@dataclass
class SchrodingerConfig:
    """Configuration of the nonlinear grid demo."""

    Dg: int = 100
    noise_levels: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    dt_list: list = field(default_factory=lambda: [0.1, 2.0, 20.0])
    J: int = 50
    C: float = 0.5
    k_max: int = 1000
    mu: float = 1.0
    amplitude: float = 0.5
    replicates: int = 20
    seed: int = 0
    output_path: str = ""
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        if len(self.dt_list) != len(self.noise_levels):
            raise ValueError("dt_list must align one step size with each noise level")


@dataclass
class StudyReport:
    """Flat result rows plus the fitted and theoretical slopes."""

    rows: list
    columns: list
    fitted_slope: Optional[float] = None
    theory_slope: Optional[float] = None
    summary: dict = field(default_factory=dict)


def _single_threaded_blas(fn):
    """Pin BLAS to one thread inside a study.

    Every matrix here is small (a few hundred rows at most); spinning
    BLAS worker threads costs far more than it saves, and replicate-level
    parallelism is handled by our own thread pool.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with threadpool_limits(limits=1):
            return fn(*args, **kwargs)

    return wrapper


def _child_seed(*parts) -> int:
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _map_ordered(fn: Callable, keys: Sequence, threads: int) -> list:
    """Apply fn over keys, possibly concurrently, preserving key order."""
    if threads <= 1 or len(keys) <= 1:
        return [fn(k) for k in keys]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, keys))


def _signal_coeffs(cfg: StudyConfig, lam: np.ndarray, D: int) -> np.ndarray:
    """Ground-truth theta coefficients for the configured signal kind.

    Power-law signals parameterise the whitened sequence (the space the
    stopping theory measures smoothness in), so the theta coefficients are
    sqrt(lambda) times the power law.  The rough/smooth references are
    stated directly in theta space.
    """
    if cfg.signal_kind == "power":
        tilde = test_signal("power", D, cfg.beta, cfg.signal_scale)
        return np.sqrt(lam) * tilde.coeffs
    return test_signal(cfg.signal_kind, D, cfg.beta, cfg.signal_scale).coeffs


def _wrap_signal(coeffs: np.ndarray, beta: float) -> Signal:
    from .spectral import sobolev_norm_sq

    return Signal(coeffs=coeffs, declared_beta=beta, radius=float(np.sqrt(sobolev_norm_sq(coeffs, beta))))


def _tau_run(cfg: StudyConfig, n: int, rep: int, theta: Optional[np.ndarray] = None) -> dict:
    D = truncation_dim(n, cfg.p)
    model = make_model(cfg.p, cfg.alpha, D)
    coeffs = _signal_coeffs(cfg, model.lam, D) if theta is None else theta
    run_seed = _child_seed(cfg.seed, n, rep)
    obs = generate_observation(model, _wrap_signal(coeffs, cfg.beta), n, 1.0, run_seed)
    stop = tau_dp(model, obs, StopConfig.from_counts(D, n, cfg.C, tau_max=cfg.tau_max))
    post = posterior(model, obs, stop.stopped_at)
    err = post.mean - coeffs
    return {
        "n": n,
        "replicate": rep,
        "seed": run_seed,
        "tau_dp": stop.stopped_at,
        "t_dp": stop.stopped_at**2,
        "converged": stop.converged,
        "mse_theta": float(np.sum(err**2)),
        "mse_tilde": float(np.sum(err**2 / model.lam)),
        "trace_cov": trace_posterior_cov(model, stop.stopped_at, n),
    }


def _collect_tau_rows(cfg: StudyConfig) -> list:
    keys = [(n, rep) for n in cfg.n_grid for rep in range(cfg.replicates)]
    return _map_ordered(lambda key: _tau_run(cfg, *key), keys, cfg.threads)


def _group_means(rows: list, value: str) -> dict:
    out: dict = {}
    for row in rows:
        out.setdefault(row["n"], []).append(row[value])
    return {n: float(np.mean(v)) for n, v in out.items()}


def _loglog_fit(means: dict, drop_first: bool) -> tuple[Optional[float], Optional[float]]:
    ns = sorted(means)
    if drop_first and len(ns) > 2:
        ns = ns[1:]
    if len(ns) < 2:
        return None, None
    x = np.log(np.array(ns, dtype=float))
    yv = np.log(np.array([means[n] for n in ns]))
    slope, intercept = np.polyfit(x, yv, 1)
    return float(slope), float(intercept)


@_single_threaded_blas
def rate_study(cfg: StudyConfig) -> StudyReport:
    """MSE of the stopped estimator across the sample-size grid.

    Fits an OLS line to log mean MSE (theta space) against log n and
    records the theoretical rate exponent alongside; the whitened-space
    MSE is reported per row as well.
    """
    theory = rate_formulas(cfg.p, cfg.alpha, cfg.beta).mse_rate_exponent
    rows = _collect_tau_rows(cfg)
    slope, intercept = _loglog_fit(_group_means(rows, "mse_theta"), cfg.drop_first)
    for row in rows:
        row["fitted_slope"] = slope
        row["fitted_intercept"] = intercept
        row["theory_slope"] = theory
    columns = [
        "n", "replicate", "seed", "tau_dp", "t_dp", "converged",
        "mse_theta", "mse_tilde", "trace_cov",
        "fitted_slope", "fitted_intercept", "theory_slope",
    ]
    return StudyReport(rows=rows, columns=columns, fitted_slope=slope, theory_slope=theory)


@_single_threaded_blas
def stopping_time_study(cfg: StudyConfig) -> StudyReport:
    """Empirical check of the stopping-time lower bound.

    The bound lives on the time scale t = tau_dp^2: the fitted constant is
    half the smallest ratio t_dp / n^expo observed at the smallest n, and
    each run records whether its t_dp clears c0 * n^expo.
    """
    expo = rate_formulas(cfg.p, cfg.alpha, cfg.beta).tau_lo_exponent
    rows = _collect_tau_rows(cfg)
    n_min = min(cfg.n_grid)
    base = [r["t_dp"] / n_min**expo for r in rows if r["n"] == n_min]
    c0 = C0_FIT_MARGIN * min(base)
    fractions: dict = {}
    for row in rows:
        threshold_t = c0 * row["n"] ** expo
        row["threshold_t"] = threshold_t
        row["exceeds"] = row["t_dp"] >= threshold_t
        row["c0"] = c0
        row["tau_lo_exponent"] = expo
    for n in cfg.n_grid:
        sub = [r["exceeds"] for r in rows if r["n"] == n]
        fractions[n] = float(np.mean(sub))
    for row in rows:
        row["fraction"] = fractions[row["n"]]
    columns = [
        "n", "replicate", "seed", "tau_dp", "t_dp", "converged",
        "threshold_t", "exceeds", "fraction", "c0", "tau_lo_exponent",
    ]
    return StudyReport(
        rows=rows, columns=columns, theory_slope=expo, summary={"fractions": fractions, "c0": c0}
    )


@_single_threaded_blas
def contraction_study(cfg: StudyConfig) -> StudyReport:
    """Posterior-trace decay across the sample-size grid."""
    eps_expo = rate_formulas(cfg.p, cfg.alpha, cfg.beta).mse_rate_exponent
    rows = _collect_tau_rows(cfg)
    for row in rows:
        eps_sq = float(row["n"]) ** eps_expo
        row["eps_sq"] = eps_sq
        row["ratio"] = row["trace_cov"] / eps_sq
    slope, intercept = _loglog_fit(_group_means(rows, "trace_cov"), cfg.drop_first)
    for row in rows:
        row["fitted_slope"] = slope
    columns = [
        "n", "replicate", "seed", "tau_dp", "t_dp", "converged",
        "trace_cov", "eps_sq", "ratio", "fitted_slope",
    ]
    return StudyReport(rows=rows, columns=columns, fitted_slope=slope)


def _coverage_run(cfg: StudyConfig, bprime: float, n: int, rep: int) -> dict:
    D = truncation_dim(n, cfg.p)
    model = make_model(cfg.p, cfg.alpha, D)
    i = np.arange(1, D + 1, dtype=float)
    theta = cfg.signal_scale * i ** (-1.0 - 2.0 * bprime)
    run_seed = _child_seed(cfg.seed, n, rep)
    obs = generate_observation(model, _wrap_signal(theta, bprime), n, 1.0, run_seed)
    stop = tau_dp(model, obs, StopConfig.from_counts(D, n, cfg.C, tau_max=cfg.tau_max))
    post = posterior(model, obs, stop.stopped_at)
    err = float(np.linalg.norm(post.mean - theta))
    rng = np.random.default_rng(_child_seed(cfg.seed, n, rep, 1))
    draws = rng.standard_normal((cfg.credible_draws, D))
    norms = np.sqrt(draws**2 @ post.var)
    radius = float(np.quantile(norms, cfg.credible_level))
    return {
        "n": n,
        "replicate": rep,
        "seed": run_seed,
        "tau_dp": stop.stopped_at,
        "err_norm": err,
        "radius": radius,
        "covered": err <= radius,
    }


@_single_threaded_blas
def coverage_study(cfg: StudyConfig) -> StudyReport:
    """Frequentist coverage of the credible ball at the stopped scale.

    The truth decays as i^{-1-2*beta'} with beta' above the study beta, and
    the credible radius is simulated from the stopped posterior.
    """
    bprime = cfg.beta_prime if cfg.beta_prime is not None else cfg.beta + 1.0
    if not bprime > cfg.beta:
        raise ValueError(f"beta_prime must exceed beta, got {bprime} <= {cfg.beta}")
    keys = [(n, rep) for n in cfg.n_grid for rep in range(cfg.replicates)]
    rows = _map_ordered(lambda key: _coverage_run(cfg, bprime, *key), keys, cfg.threads)
    coverages = _group_means(rows, "covered")
    for row in rows:
        row["coverage"] = coverages[row["n"]]
    columns = ["n", "replicate", "seed", "tau_dp", "err_norm", "radius", "covered", "coverage"]
    return StudyReport(rows=rows, columns=columns, summary={"coverage": coverages})


def _ensemble_band(ensemble: Ensemble) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo, hi = np.quantile(ensemble.members, [0.025, 0.975], axis=0)
    return ensemble.mean, lo, hi


@_single_threaded_blas
def linear_demo(cfg: StudyConfig) -> StudyReport:
    """Ensemble runs on the rough and smooth references per noise level.

    Emits the per-coefficient ensemble mean and 95% band with the stopped
    scale; non-convergence at k_max is flagged per cell and the run's
    output is still recorded.
    """
    D = cfg.demo_dim
    model = make_model(cfg.p, cfg.alpha, D)
    rows = []
    for kind_idx, kind in enumerate(("rough", "smooth")):
        truth = test_signal(kind, D).coeffs
        for level, noise in enumerate(cfg.noise_levels):
            n = max(1, round(noise**-2))
            run_seed = _child_seed(cfg.seed, kind_idx, level, 0)
            obs = generate_observation(model, _wrap_signal(truth, cfg.beta), n, 1.0, run_seed)
            kappa = make_kappa(D, n, cfg.C)
            ensemble = init_random(model.lam, cfg.ensemble_size, _child_seed(cfg.seed, kind_idx, level, 1))
            dt = cfg.demo_dt(level)
            final, report = run_until_dp(ensemble, model.sigma, obs.y, kappa, dt, cfg.k_max)
            mean, lo, hi = _ensemble_band(final)
            t_stop = report.stopped_at * dt
            for idx in range(D):
                rows.append(
                    {
                        "signal": kind,
                        "noise": noise,
                        "index": idx + 1,
                        "truth": float(truth[idx]),
                        "mean": float(mean[idx]),
                        "q025": float(lo[idx]),
                        "q975": float(hi[idx]),
                        "tau_dp": float(np.sqrt(t_stop)),
                        "k_dp": report.stopped_at,
                        "converged": report.converged,
                    }
                )
    columns = [
        "signal", "noise", "index", "truth", "mean", "q025", "q975",
        "tau_dp", "k_dp", "converged",
    ]
    return StudyReport(rows=rows, columns=columns)


@_single_threaded_blas
def nonlinear_demo(cfg: SchrodingerConfig) -> StudyReport:
    """Schrodinger inversion across noise levels, grid-indexed bands.

    Each (noise, replicate) cell runs the ensemble with that level's time
    step; rows carry the per-point band plus the run's RMSE to the truth.
    """
    def one(key):
        level, rep = key
        noise = cfg.noise_levels[level]
        problem = schro.make_problem(cfg.Dg, noise, cfg.amplitude)
        ensemble, report = schro.run_schrodinger_inversion(
            problem,
            cfg.J,
            cfg.C,
            cfg.dt_list[level],
            cfg.k_max,
            _child_seed(cfg.seed, level, rep),
            mu=cfg.mu,
        )
        mean, lo, hi = _ensemble_band(ensemble)
        rmse = float(np.sqrt(np.mean((mean - problem.theta_true) ** 2)))
        out = []
        for idx in range(problem.grid.size):
            out.append(
                {
                    "noise": noise,
                    "replicate": rep,
                    "index": idx,
                    "x": float(problem.grid.x[idx]),
                    "truth": float(problem.theta_true[idx]),
                    "mean": float(mean[idx]),
                    "q025": float(lo[idx]),
                    "q975": float(hi[idx]),
                    "k_dp": report.stopped_at,
                    "converged": report.converged,
                    "rmse": rmse,
                }
            )
        return out

    keys = [(level, rep) for level in range(len(cfg.noise_levels)) for rep in range(cfg.replicates)]
    blocks = _map_ordered(one, keys, cfg.threads)
    rows = [row for block in blocks for row in block]
    columns = [
        "noise", "replicate", "index", "x", "truth", "mean", "q025", "q975",
        "k_dp", "converged", "rmse",
    ]
    return StudyReport(rows=rows, columns=columns)


@_single_threaded_blas
def enkf_run(cfg: StudyConfig) -> StudyReport:
    """Single linear ensemble run emitting its residual trajectory."""
    D = cfg.demo_dim
    model = make_model(cfg.p, cfg.alpha, D)
    truth = _signal_coeffs(cfg, model.lam, D)
    noise = cfg.noise_levels[0]
    n = max(1, round(noise**-2))
    obs = generate_observation(model, _wrap_signal(truth, cfg.beta), n, 1.0, _child_seed(cfg.seed, 0))
    kappa = make_kappa(D, n, cfg.C)
    ensemble = init_random(model.lam, cfg.ensemble_size, _child_seed(cfg.seed, 1))
    dt = cfg.demo_dt(0)
    _, report = run_until_dp(ensemble, model.sigma, obs.y, kappa, dt, cfg.k_max)
    rows = [
        {"k": k, "t": k * dt, "residual": float(r), "kappa": kappa}
        for k, r in enumerate(report.residuals)
    ]
    return StudyReport(
        rows=rows,
        columns=["k", "t", "residual", "kappa"],
        summary={"stopped_at": report.stopped_at, "converged": report.converged},
    )


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    """RFC-4180 CSV with a header row and deterministic number formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in columns])
