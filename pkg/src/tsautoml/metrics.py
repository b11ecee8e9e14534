"""AUC, NMI and latent-space cluster assignment."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass
class EvalReport:
    task: str
    metric: str
    value: float
    split: str = "test"
    ids: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"task": self.task, "metric": self.metric, "value": self.value, "split": self.split}


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties. Label 1 = anomalous."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: only one class present")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """I(pred; truth) / sqrt(H(pred) H(truth))."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape or pred.size < 1:
        raise MetricError("nmi needs two equal-length, non-empty labelings")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(table, (pi, ti), 1.0)
    hp, ht = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if hp == 0.0 or ht == 0.0:
        return 1.0 if hp == ht else 0.0
    n = table.sum()
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return float(min(1.0, max(0.0, mi / np.sqrt(hp * ht))))


def assign_latents(Y, n_clusters: int, seed: int = 0) -> np.ndarray:
    from .gmm import fit_em, responsibilities
    if n_clusters < 2:
        raise MetricError("need at least two clusters")
    params = fit_em(Y, n_clusters, iters=100, seed=seed)
    gamma, _ = responsibilities(params, Y)
    return gamma.argmax(axis=1)


def assign_clusters(model, data, n_clusters: int, seed: int = 0) -> np.ndarray:
    """Fit a fresh GMM on the model's latents of ``data`` and take the MAP component."""
    from .train import latents
    return assign_latents(latents(model, data), n_clusters, seed)


def write_scores_csv(path, ids, scores, labels: Optional[list] = None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score", "label"])
        for k, (i, s) in enumerate(zip(ids, scores)):
            lab = "" if labels is None or labels[k] is None else int(labels[k])
            w.writerow([i, repr(float(s)), lab])
