"""Render dpstop study CSVs into static PNG figures.

Four figure kinds, each validated against the CSV header before any file
is written:

  coeff-bands    truth, ensemble mean, and 2.5-97.5% band per coefficient
  grid-bands     the same over spatial grid points, averaged per noise level
  rate-fit       log-log MSE points with the OLS line and theory reference
  residual-trace residual trajectory against the stopping threshold

Rendering does no computation beyond plotting: slopes, bands, and
thresholds all come from the CSV columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "SchemaError", "EmptyDataError", "render", "REQUIRED_COLUMNS"]


class SchemaError(ValueError):
    """CSV header does not match the requested figure kind."""


class EmptyDataError(ValueError):
    """CSV holds a header but no data rows."""


REQUIRED_COLUMNS = {
    "coeff-bands": ["signal", "noise", "index", "truth", "mean", "q025", "q975"],
    "grid-bands": ["noise", "replicate", "x", "truth", "mean", "q025", "q975"],
    "rate-fit": ["n", "mse_theta", "fitted_slope", "fitted_intercept", "theory_slope"],
    "residual-trace": ["k", "residual", "kappa"],
}


@dataclass(frozen=True)
class FigureSpec:
    csv_path: str
    figure_kind: str
    out_png: str
    title: str = ""


def load_rows(csv_path: str, figure_kind: str) -> list[dict]:
    """Read the CSV, check the header for the kind, return raw rows."""
    if figure_kind not in REQUIRED_COLUMNS:
        raise SchemaError(
            f"unknown figure kind {figure_kind!r}; expected one of {sorted(REQUIRED_COLUMNS)}"
        )
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in REQUIRED_COLUMNS[figure_kind]:
            if column not in header:
                raise SchemaError(
                    f"{figure_kind} needs column {column!r}, not found in {csv_path}"
                )
        rows = list(reader)
    if not rows:
        raise EmptyDataError(f"{csv_path} has a header but no data rows")
    return rows


def _floats(rows: list[dict], column: str) -> np.ndarray:
    values = []
    for row in rows:
        raw = row[column]
        if raw == "":
            raise ValueError(f"column {column!r} has an empty value; cannot plot")
        values.append(float(raw))
    return np.array(values)


def _bands_panel(ax, x, truth, mean, lo, hi, label):
    ax.fill_between(x, lo, hi, alpha=0.3, color="tab:blue", label="95% band")
    ax.plot(x, truth, color="black", lw=1.2, label="truth")
    ax.plot(x, mean, color="tab:red", lw=1.0, label="ensemble mean")
    ax.set_title(label, fontsize=9)


def _render_coeff_bands(rows, fig_title):
    signals = sorted({r["signal"] for r in rows})
    noises = sorted({float(r["noise"]) for r in rows}, reverse=True)
    fig, axes = plt.subplots(
        len(signals), len(noises),
        figsize=(3.2 * len(noises), 2.6 * len(signals)),
        squeeze=False, sharex=True,
    )
    for i, sig in enumerate(signals):
        for j, noise in enumerate(noises):
            sub = [r for r in rows if r["signal"] == sig and float(r["noise"]) == noise]
            sub.sort(key=lambda r: float(r["index"]))
            ax = axes[i][j]
            _bands_panel(
                ax,
                _floats(sub, "index"),
                _floats(sub, "truth"),
                _floats(sub, "mean"),
                _floats(sub, "q025"),
                _floats(sub, "q975"),
                f"{sig}, noise {noise:g}",
            )
            if i == len(signals) - 1:
                ax.set_xlabel("coefficient index")
    axes[0][0].legend(fontsize=7)
    fig.suptitle(fig_title)
    return fig


def _render_grid_bands(rows, fig_title):
    noises = sorted({float(r["noise"]) for r in rows}, reverse=True)
    fig, axes = plt.subplots(
        1, len(noises), figsize=(3.2 * len(noises), 2.8), squeeze=False, sharey=True
    )
    for j, noise in enumerate(noises):
        sub = [r for r in rows if float(r["noise"]) == noise]
        xs = sorted({float(r["x"]) for r in sub})
        agg = {x: {"truth": [], "mean": [], "q025": [], "q975": []} for x in xs}
        for r in sub:
            cell = agg[float(r["x"])]
            for key in cell:
                cell[key].append(float(r[key]))
        ax = axes[0][j]
        _bands_panel(
            ax,
            np.array(xs),
            np.array([np.mean(agg[x]["truth"]) for x in xs]),
            np.array([np.mean(agg[x]["mean"]) for x in xs]),
            np.array([np.mean(agg[x]["q025"]) for x in xs]),
            np.array([np.mean(agg[x]["q975"]) for x in xs]),
            f"noise {noise:g}",
        )
        ax.set_xlabel("x")
    axes[0][0].legend(fontsize=7)
    fig.suptitle(fig_title)
    return fig


def _render_rate_fit(rows, fig_title):
    ns = _floats(rows, "n")
    mses = _floats(rows, "mse_theta")
    slope = float(rows[0]["fitted_slope"]) if rows[0]["fitted_slope"] != "" else None
    intercept = (
        float(rows[0]["fitted_intercept"]) if rows[0]["fitted_intercept"] != "" else None
    )
    theory = float(rows[0]["theory_slope"])
    if slope is None or intercept is None:
        raise ValueError("fitted_slope/fitted_intercept are empty; nothing to draw")
    uniq = np.array(sorted(set(ns)))
    means = np.array([mses[ns == n].mean() for n in uniq])
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.loglog(uniq, means, "o", color="tab:blue", label="mean MSE")
    ax.loglog(uniq, np.exp(intercept) * uniq**slope, "-", color="tab:red",
              label=f"OLS fit (slope {slope:.3f})")
    anchor = means[0] / uniq[0] ** theory
    ax.loglog(uniq, anchor * uniq**theory, "--", color="black",
              label=f"theory (slope {theory:.3f})")
    ax.set_xlabel("n")
    ax.set_ylabel("MSE")
    ax.legend(fontsize=7)
    ax.set_title(fig_title)
    return fig


def _render_residual_trace(rows, fig_title):
    ks = _floats(rows, "k")
    res = _floats(rows, "residual")
    kappa = float(rows[0]["kappa"])
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.semilogy(ks, res, "-o", ms=2.5, color="tab:blue", label="residual")
    ax.axhline(kappa, color="black", ls="--", lw=1.0, label="threshold")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("residual")
    ax.legend(fontsize=7)
    ax.set_title(fig_title)
    return fig


_RENDERERS = {
    "coeff-bands": _render_coeff_bands,
    "grid-bands": _render_grid_bands,
    "rate-fit": _render_rate_fit,
    "residual-trace": _render_residual_trace,
}


def render(spec: FigureSpec) -> str:
    """Validate the CSV against the kind and write the PNG.

    Nothing is written when validation fails.  Output is deterministic
    for fixed input bytes (no embedded timestamps).
    """
    rows = load_rows(spec.csv_path, spec.figure_kind)
    fig = _RENDERERS[spec.figure_kind](rows, spec.title or spec.figure_kind)
    fig.savefig(spec.out_png, dpi=130, metadata={"Software": "figures"})
    plt.close(fig)
    return spec.out_png
