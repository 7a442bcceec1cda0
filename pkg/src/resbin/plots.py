"""Figure rendering for the CLI report paths.

Everything draws through the Agg backend and strips volatile metadata so a
re-run with identical inputs produces identical SVG bytes.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

matplotlib.rcParams["svg.hashsalt"] = "resbin"

__all__ = [
    "save_loss_plot",
    "save_correlation_plot",
    "save_layerwise_bars",
    "save_sweep_plot",
]

_SAVE_KW = {"metadata": {"Date": None}, "bbox_inches": "tight"}


def _finish(fig, path):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_loss_plot(path, curves: dict) -> None:
    """Overlay per-variant loss trajectories on a log-scaled axis.

    curves maps a label to (steps, losses).
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, (steps, losses) in sorted(curves.items()):
        ax.plot(steps, losses, label=label, linewidth=1.5)
    ax.set_xlabel("step")
    ax.set_ylabel("distillation loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    _finish(fig, path)


def save_correlation_plot(path, curves: dict) -> None:
    """Overlay corr(y1, y2) trajectories, one line per label."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, (steps, corr) in sorted(curves.items()):
        ax.plot(steps, corr, label=label, linewidth=1.5)
    ax.axhline(0.0, color="black", linewidth=0.8, alpha=0.5)
    ax.set_xlabel("step")
    ax.set_ylabel("corr(y1, y2)")
    ax.set_ylim(-1.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    _finish(fig, path)


def save_layerwise_bars(path, layer_ids, c_prime, covariance, total) -> None:
    """Stacked error decomposition per layer.

    Each bar stacks the quadratic term and the (signed) covariance term;
    markers show the resulting total so cancellation is visible.
    """
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(layer_ids)), 4.0))
    xs = range(len(layer_ids))
    ax.bar(xs, c_prime, width=0.6, label="quadratic", color="#4878d0")
    ax.bar(xs, covariance, width=0.6, bottom=c_prime, label="covariance", color="#ee854a")
    ax.plot(xs, total, "k_", markersize=14, label="total")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(layer_ids, rotation=45, ha="right")
    ax.set_ylabel("output MSE contribution")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    _finish(fig, path)


def save_sweep_plot(path, t_values, losses) -> None:
    """Initial task loss as a function of refinement sweep budget."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(t_values, losses, marker="o", linewidth=1.5)
    ax.set_xlabel("refinement sweeps")
    ax.set_ylabel("initial task loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    _finish(fig, path)
