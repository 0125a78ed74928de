"""Figure rendering for the CLI report path.

Figures are written next to the delimited outputs when --plots is given;
nothing here affects the numerical results.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .feedback import EnsembleStats, TrajectoryRecord
from .verification import MOMENT_NAMES, ComparisonResult


def trajectory_figure(record: TrajectoryRecord, path: str | Path) -> Path:
    """Means, covariances and record/control traces of one run."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    t = record.times
    axes[0].plot(t, record.mean_x, label=r"$\langle x\rangle$")
    axes[0].plot(t, record.mean_p, label=r"$\langle p\rangle$")
    axes[0].set_ylabel("conditional means")
    axes[0].legend(loc="best", fontsize=8)
    axes[1].plot(t, record.v_x, label=r"$V_x$")
    axes[1].plot(t, record.v_p, label=r"$V_p$")
    axes[1].plot(t, record.c, label=r"$C$")
    axes[1].set_ylabel("covariances")
    axes[1].legend(loc="best", fontsize=8)
    axes[2].plot(t, record.records, lw=0.4, label=r"$dQ$")
    axes[2].plot(t, record.controls[:, 0], label=r"$u_x$")
    axes[2].plot(t, record.controls[:, 1], label=r"$u_p$")
    axes[2].set_ylabel("record / control")
    axes[2].set_xlabel("t")
    axes[2].legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def ensemble_figure(stats: EnsembleStats, path: str | Path) -> Path:
    """Tail-time excess covariance estimates against the closed forms."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    t = stats.sample_times
    series = (
        (stats.var_x_t, r"$\tilde V_x^e$", "C0"),
        (stats.var_p_t, r"$\tilde V_p^e$", "C1"),
        (stats.cov_t, r"$\tilde C^e$", "C2"),
    )
    analytic = stats.excess_analytic.triple() if stats.excess_analytic else None
    for i, (vals, label, color) in enumerate(series):
        ax.plot(t, vals, "o-", ms=3, color=color, label=label)
        if analytic is not None:
            ax.axhline(analytic[i], color=color, ls="--", lw=1)
    ax.set_xlabel("t")
    ax.set_ylabel("excess covariances (tilde scaled)")
    ax.set_title(f"ensemble of {stats.n_traj} trajectories; dashed = closed form")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def verify_figure(result: ComparisonResult, path: str | Path) -> Path:
    """Oracle vs filter moments and the pointwise deviations."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for j, name in enumerate(MOMENT_NAMES):
        axes[0].plot(result.times, result.gauss_moments[:, j], lw=0.8, label=name)
        axes[0].plot(result.times, result.fock_moments[:, j], lw=0.8, ls="--", color="k", alpha=0.4)
    axes[0].set_ylabel("moments (dashed: oracle)")
    axes[0].legend(loc="best", fontsize=8, ncol=3)
    err = np.abs(result.fock_moments - result.gauss_moments) / result.scales
    for j, name in enumerate(MOMENT_NAMES):
        axes[1].semilogy(result.times, np.maximum(err[:, j], 1e-18), lw=0.8, label=name)
    axes[1].set_ylabel("relative deviation")
    axes[1].set_xlabel("t")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
