"""Figure rendering for summary and benchmark outputs.

Every function writes one PNG next to the delimited output it mirrors and
returns the written path.  Rendering uses the Agg backend so commands work
headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = [
    "plot_mean_surface",
    "plot_marginals",
    "plot_eigenfunctions",
    "plot_loglik_traces",
    "plot_benchmark",
]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_mean_surface(bundle, path) -> Path:
    """Heatmap of the posterior mean surface with band-width inset."""
    s, t = bundle.s_points, bundle.t_points
    band = bundle.mean_surface
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    im0 = axes[0].pcolormesh(t, s, band.center, shading="auto", cmap="viridis")
    axes[0].set_title("posterior mean surface")
    fig.colorbar(im0, ax=axes[0])
    im1 = axes[1].pcolormesh(t, s, band.upper - band.lower, shading="auto",
                             cmap="magma")
    axes[1].set_title(f"simultaneous band width ({band.level:.0%})")
    fig.colorbar(im1, ax=axes[1])
    for ax in axes:
        ax.set_xlabel("t")
        ax.set_ylabel("s")
    return _save(fig, path)


def plot_marginals(bundle, path) -> Path:
    """Heatmaps of the posterior mean marginal covariances."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, marg, label in ((axes[0], bundle.ks_mean, "K_S"),
                            (axes[1], bundle.kt_mean, "K_T")):
        pts = marg.points
        im = ax.pcolormesh(pts, pts, marg.matrix, shading="auto", cmap="viridis")
        ax.set_title(f"posterior mean {label}")
        fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_eigenfunctions(bundle, path) -> Path:
    """Aligned posterior mean eigenfunctions with simultaneous bands."""
    n_comp = len(bundle.eigen_s.bands)
    fig, axes = plt.subplots(2, n_comp, figsize=(3.2 * n_comp, 6), squeeze=False)
    for row, (eig, label) in enumerate(((bundle.eigen_s, "s"),
                                        (bundle.eigen_t, "t"))):
        for j, band in enumerate(eig.bands):
            ax = axes[row][j]
            ax.fill_between(eig.points, band.lower, band.upper,
                            alpha=0.3, color="tab:blue", lw=0)
            ax.plot(eig.points, band.center, color="tab:blue")
            ax.axhline(0.0, color="grey", lw=0.5)
            ax.set_title(f"{label}-axis component {j + 1} "
                         f"(fve {eig.fve_mean[j]:.2f})")
            ax.set_xlabel(label)
    fig.tight_layout()
    return _save(fig, path)


def plot_loglik_traces(draws, path) -> Path:
    """Per-chain log-likelihood traces."""
    fig, ax = plt.subplots(figsize=(8, 4))
    traces = draws.diagnostics.get("loglik_trace", {})
    for cid, trace in sorted(traces.items()):
        ax.plot(np.arange(len(trace)), trace, lw=0.7, label=f"chain {cid}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("log likelihood")
    if traces:
        ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_benchmark(rows, path) -> Path:
    """Relative-error medians with (q10, q90) whiskers per quantity."""
    quantities = sorted({r["quantity"] for r in rows})
    estimators = sorted({r["estimator"] for r in rows})
    fig, ax = plt.subplots(figsize=(1.3 * len(quantities) + 2, 4))
    width = 0.8 / max(len(estimators), 1)
    colors = plt.cm.tab10.colors
    for k, est in enumerate(estimators):
        xs, meds, los, his = [], [], [], []
        for i, q in enumerate(quantities):
            match = [r for r in rows if r["quantity"] == q and r["estimator"] == est]
            if not match:
                continue
            r = match[0]
            xs.append(i + (k - (len(estimators) - 1) / 2) * width)
            meds.append(r["median"])
            los.append(r["median"] - r["q10"])
            his.append(r["q90"] - r["median"])
        ax.errorbar(xs, meds, yerr=[los, his], fmt="o", capsize=3,
                    color=colors[k % 10], label=est)
    ax.set_xticks(range(len(quantities)))
    ax.set_xticklabels(quantities)
    ax.set_ylabel("relative error")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("median relative errors (whiskers: 10-90% quantiles)")
    return _save(fig, path)
