"""Matplotlib renderings of the report data (PNG, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ratings import RatingScale  # noqa: E402

__all__ = ["rating_fan", "collateral_panels", "pre_default_bars"]

# no version string in the file, so reruns are byte-identical
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def _step_path(p, horizon):
    t = np.concatenate([[0.0], p.times, [horizon]])
    s = np.concatenate([[p.initial], p.states, [p.terminal]])
    return t, s


def rating_fan(path, fans: dict, scale: RatingScale):
    """Rating trajectories from one start rating, one panel per measure."""
    fig, axes = plt.subplots(1, len(fans), figsize=(5 * len(fans), 3.6), sharey=True,
                             squeeze=False)
    for ax, (measure, paths) in zip(axes[0], fans.items()):
        for p in paths:
            t, s = _step_path(p, p.horizon)
            ax.step(t, s, where="post", lw=0.8, alpha=0.5)
        ax.set_title(f"{len(paths)} paths under {measure}")
        ax.set_xlabel("time (years)")
        ax.set_yticks(range(scale.size))
        ax.set_yticklabels(scale.labels)
        ax.invert_yaxis()
        ax.grid(alpha=0.3)
    axes[0, 0].set_ylabel("rating")
    fig.tight_layout()
    return _save(fig, path)


def collateral_panels(path, grid, value, collateral, bank_ratings, cpty_ratings,
                      bank_thresholds, cpty_thresholds, scale: RatingScale):
    """Portfolio and collateral, ratings, and thresholds for one scenario."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 7.5), sharex=True)
    ax = axes[0]
    ax.plot(grid, value, lw=1.0, label="portfolio value")
    ax.step(grid, collateral, where="post", lw=1.0, label="collateral")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_ylabel("EUR")
    ax.legend(loc="upper left", fontsize=8)
    ax = axes[1]
    ax.step(grid, bank_ratings, where="post", label="bank")
    ax.step(grid, cpty_ratings, where="post", label="counterparty")
    ax.set_yticks(range(scale.size))
    ax.set_yticklabels(scale.labels)
    ax.invert_yaxis()
    ax.set_ylabel("rating")
    ax.legend(loc="upper left", fontsize=8)
    ax = axes[2]
    ax.step(grid, bank_thresholds, where="post", label="bank threshold")
    ax.step(grid, cpty_thresholds, where="post", label="counterparty threshold")
    ax.set_ylabel("EUR")
    ax.set_xlabel("time (years)")
    ax.legend(loc="upper left", fontsize=8)
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def pre_default_bars(path, hists: dict, scale: RatingScale):
    """Stacked bars of pre-default ratings by start rating, one panel per measure.

    Bars are normalised per start rating so the panels compare composition.
    """
    k = scale.size
    starts = np.arange(k - 1)
    fig, axes = plt.subplots(1, len(hists), figsize=(5 * len(hists), 3.8), sharey=True,
                             squeeze=False)
    colors = plt.get_cmap("viridis")(np.linspace(0, 1, k - 1))
    for ax, (measure, h) in zip(axes[0], hists.items()):
        h = np.asarray(h)[:k - 1, :k - 1]
        tot = h.sum(axis=1, keepdims=True)
        share = np.divide(h, tot, out=np.zeros_like(h), where=tot > 0)
        bottom = np.zeros(k - 1)
        for j in range(k - 1):
            ax.bar(starts, share[:, j], bottom=bottom, color=colors[j], label=scale.labels[j])
            bottom += share[:, j]
        ax.set_xticks(starts)
        ax.set_xticklabels(scale.labels[:k - 1])
        ax.set_xlabel("initial rating")
        ax.set_title(f"rating before default under {measure}")
    axes[0, 0].set_ylabel("share of defaults")
    axes[0, -1].legend(title="pre-default", fontsize=8, loc="center left",
                       bbox_to_anchor=(1.0, 0.5))
    fig.tight_layout()
    return _save(fig, path)
