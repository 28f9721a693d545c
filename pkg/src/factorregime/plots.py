"""Figure rendering for report outputs.

Every report-producing command writes its CSV/JSON artifacts and, next to
them, a PNG rendering: drift curves, Monte Carlo summary bars, and the
bootstrap LR distribution.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .simulate import DriftCurve, McReport

__all__ = ["plot_drift", "plot_mc_report", "plot_lr_draws"]


def plot_drift(curves: list[DriftCurve], path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for c in curves:
        label = "omega = inf" if np.isinf(c.omega) else f"omega = {c.omega:g}"
        (line,) = ax.plot(c.g, c.A, label=label)
        if np.any(c.mc_se > 0):
            ax.fill_between(c.g, c.A - 3 * c.mc_se, c.A + 3 * c.mc_se,
                            alpha=0.2, color=line.get_color())
    ax.set_xlabel("g")
    ax.set_ylabel("A(omega, g)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_mc_report(report: McReport, path) -> None:
    n = len(report.param_names)
    if n == 0:
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        rates = report.rejection_rates
        ax.bar(list(rates.keys()), list(rates.values()))
        ax.set_ylabel("rejection rate")
        ax.set_title(report.scenario)
    else:
        fig, axes = plt.subplots(1, 3, figsize=(10.0, 3.4))
        idx = np.arange(n)
        axes[0].bar(idx, report.bias)
        axes[0].set_title("mean bias")
        axes[1].bar(idx, report.rmse)
        axes[1].set_title("RMSE")
        cov = np.where(np.isfinite(report.coverage), report.coverage, 0.0)
        axes[2].bar(idx, cov)
        axes[2].axhline(0.95, color="k", lw=0.8, ls="--")
        axes[2].set_title("95% CI coverage")
        for ax in axes:
            ax.set_xticks(idx)
            ax.set_xticklabels(report.param_names, rotation=60, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_lr_draws(draws, lr_obs: float, cv: float, path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(np.asarray(draws), bins=40, color="steelblue", alpha=0.8)
    ax.axvline(lr_obs, color="firebrick", label=f"observed LR = {lr_obs:.4g}")
    if np.isfinite(cv):
        ax.axvline(cv, color="k", ls="--", label=f"critical value = {cv:.4g}")
    ax.set_xlabel("bootstrap LR")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
