"""Run-report figures (matplotlib, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_trace(report: dict, path):
    fs = [s["f"] for it in report["trace"] for s in it["steps"]]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, len(fs) + 1), fs, ".", alpha=0.6, label="evaluation")
    ax.plot(np.arange(1, len(fs) + 1), np.maximum.accumulate(fs), "-", label="best so far")
    ax.set_xlabel("trained model")
    ax.set_ylabel("validation objective")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_beta_state(report: dict, path):
    mods = report["beta_state"]
    fig, axes = plt.subplots(1, len(mods), figsize=(2 * len(mods), 3), sharey=True)
    for ax, (name, ab) in zip(np.atleast_1d(axes), mods.items()):
        a, b = np.asarray(ab["alpha"]), np.asarray(ab["beta"])
        ax.bar(np.arange(len(a)), a / (a + b))
        ax.set_title(name, fontsize=7)
        ax.set_xticks(np.arange(len(a)))
    np.atleast_1d(axes)[0].set_ylabel("posterior mean")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_scores(scores, labels, path):
    scores, labels = np.asarray(scores), np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bins = np.histogram_bin_edges(scores, bins=30)
    for c in sorted(set(labels.tolist())):
        ax.hist(scores[labels == c], bins=bins, alpha=0.6, label=f"label {c}")
    ax.set_xlabel("score")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_training(log: list, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ep = [e["epoch"] for e in log]
    for key in ("recon", "energy", "self", "total"):
        ax.plot(ep, [e[key] for e in log], label=key)
    ax.set_xlabel("epoch")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_figures(result, out_dir) -> dict:
    out = Path(out_dir)
    paths = {"fig_trace": out / "trace.png", "fig_beta": out / "beta_state.png"}
    plot_trace(result.report, paths["fig_trace"])
    plot_beta_state(result.report, paths["fig_beta"])
    if result.test_scores is not None:
        paths["fig_scores"] = out / "test_scores.png"
        plot_scores(result.test_scores, [s.label for s in result.splits.test], paths["fig_scores"])
    if result.model is not None and result.model.log:
        paths["fig_training"] = out / "final_training.png"
        plot_training(result.model.log, paths["fig_training"])
    return paths
