"""Matplotlib rendering for estimate reports and study tables.

Figures are written next to the delimited outputs.  SVG dates are
stripped and provenance (config hash, seed) goes into the file metadata
so re-running a configuration reproduces identical artifacts.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_figure", "render_estimate_figure", "render_study_figures"]

_COLORS = {"prime": "#1f77b4", "dprime": "#d62728", "wald": "#d62728",
           "max": "#1f77b4", "none": "#2ca02c", "bonferroni": "#d62728"}


def save_figure(fig, path_base: Path, provenance: str) -> list[Path]:
    """Save a figure as SVG and PNG with provenance metadata."""
    written = []
    svg = path_base.with_suffix(".svg")
    fig.savefig(svg, metadata={"Date": None, "Description": provenance})
    written.append(svg)
    png = path_base.with_suffix(".png")
    fig.savefig(png, dpi=150, metadata={"Description": provenance})
    written.append(png)
    plt.close(fig)
    return written


def render_estimate_figure(v, theta_prime, se_prime, theta_dprime, se_dprime,
                           delta_j, delta_hat, ci_lo, ci_hi,
                           labels: tuple[str, str], path_base: Path,
                           provenance: str, z_pointwise: float = 1.959964,
                           truth_delta=None) -> list[Path]:
    """Three-panel layout: trajectories with pointwise bands, their
    difference, and the contrast estimates with simultaneous intervals."""
    v = np.asarray(v, dtype=float)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.8))

    ax = axes[0]
    for theta, se, key, label in [(theta_prime, se_prime, "prime", labels[0]),
                                  (theta_dprime, se_dprime, "dprime", labels[1])]:
        theta = np.asarray(theta)
        se = np.asarray(se)
        ax.plot(v, theta, "o-", color=_COLORS[key], label=label)
        ax.fill_between(v, theta - z_pointwise * se, theta + z_pointwise * se,
                        color=_COLORS[key], alpha=0.15, linewidth=0)
    ax.set_xlabel("assessment time")
    ax.set_ylabel("mean outcome")
    ax.set_title("A. trajectories")
    ax.legend(fontsize=8)

    ax = axes[1]
    diff = np.asarray(theta_dprime) - np.asarray(theta_prime)
    ax.plot(v, diff, "o-", color="black")
    ax.axhline(diff[0], linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel("assessment time")
    ax.set_ylabel("difference")
    ax.set_title("B. difference trajectory")

    ax = axes[2]
    delta_j = np.asarray(delta_j)
    delta_hat = np.asarray(delta_hat)
    yerr = np.vstack([delta_hat - np.asarray(ci_lo), np.asarray(ci_hi) - delta_hat])
    ax.errorbar(delta_j, delta_hat, yerr=yerr, fmt="o", color="black",
                capsize=3, label="estimate")
    if truth_delta is not None:
        ax.plot(delta_j, np.asarray(truth_delta), "x", color="#d62728", label="truth")
        ax.legend(fontsize=8)
    ax.axhline(0.0, linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel("contrast")
    ax.set_ylabel("rate-of-change effect")
    ax.set_title("C. effects with simultaneous CIs")

    fig.tight_layout()
    return save_figure(fig, path_base, provenance)


def render_study_figures(tables, outdir: Path, provenance: str) -> list[Path]:
    """Bias-vs-n, power-vs-beta, and simultaneous power/coverage panels."""
    written = []
    cells = tables.cells
    n_values = sorted({c.n for c in cells})
    beta_values = sorted({c.beta for c in cells})
    k = len(cells[0].delta_true)

    fig, axes = plt.subplots(1, len(beta_values), figsize=(4 * len(beta_values), 3.5),
                             squeeze=False)
    for ax, beta in zip(axes[0], beta_values):
        for j in range(k):
            ys = [next(c.bias[j] for c in cells if c.n == n and c.beta == beta)
                  for n in n_values]
            ax.plot(n_values, ys, "o-", label=f"effect at t={j + 2}")
        ax.axhline(0.0, color="gray", linestyle=":", linewidth=1)
        ax.set_xscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel("bias")
        ax.set_title(f"beta = {beta:g}")
        ax.legend(fontsize=7)
    fig.tight_layout()
    written += save_figure(fig, outdir / "bias_vs_n", provenance)

    fig, axes = plt.subplots(1, len(n_values), figsize=(4 * len(n_values), 3.5),
                             squeeze=False)
    for ax, n in zip(axes[0], n_values):
        for test in ("wald", "max"):
            ys = [next(getattr(c, f"{test}_power") for c in cells
                       if c.n == n and c.beta == beta) for beta in beta_values]
            ax.plot(beta_values, ys, "o-", color=_COLORS[test], label=test)
        ax.axhline(0.80, color="black", linestyle="--", linewidth=1)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("beta")
        ax.set_ylabel("global power")
        ax.set_title(f"n = {n}")
        ax.legend(fontsize=8)
    fig.tight_layout()
    written += save_figure(fig, outdir / "power_vs_beta", provenance)

    fig, axes = plt.subplots(2, len(n_values), figsize=(4 * len(n_values), 7),
                             squeeze=False)
    for col, n in enumerate(n_values):
        for row, attr, target in ((0, "sim_power", 0.80), (1, "sim_coverage", 0.95)):
            ax = axes[row][col]
            for method in ("none", "bonferroni", "max"):
                ys = [next(getattr(c, attr)[method] for c in cells
                           if c.n == n and c.beta == beta) for beta in beta_values]
                ax.plot(beta_values, ys, "o-", color=_COLORS[method], label=method)
            ax.axhline(target, color="black", linestyle="--", linewidth=1)
            ax.set_ylim(-0.02, 1.02)
            ax.set_xlabel("beta")
            ax.set_ylabel(attr.replace("sim_", "simultaneous "))
            ax.set_title(f"n = {n}")
            ax.legend(fontsize=7)
    fig.tight_layout()
    written += save_figure(fig, outdir / "simultaneous", provenance)
    return written
