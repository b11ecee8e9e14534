"""Loss assembly, mini-batch training with Adam, scoring and the search
objective for one fixed pipeline and hyperparameter vector."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import gmm, nets
from .augment import augment_dataset, negatives_for
from .data import Dataset, SplitDataset
from .metrics import MetricError, assign_latents, auc, nmi
from .space import HyperparamVector, PipelineConfig, build_configs

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, reason: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {reason}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1e-4
    lambda2: float = 0.5
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-2
    seed: int = 0
    clip_norm: Optional[float] = 5.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 1, batch_size >= 1 and learning_rate > 0 required")


@dataclass
class TrainedModel:
    weights: nets.ModelWeights
    net_config: nets.NetConfig
    gmm: gmm.GMMParams
    pipeline: Optional[PipelineConfig] = None
    hyperparams: Optional[HyperparamVector] = None
    log: list = field(default_factory=list)
    normal_class: Optional[int] = None

    def to_json_dict(self) -> dict:
        return {
            "net_config": asdict(self.net_config),
            "tensors": self.weights.to_json_dict(),
            "gmm": self.gmm.to_dict(),
            "pipeline": None if self.pipeline is None else self.pipeline.names(),
            "hyperparams": None if self.hyperparams is None else dict(self.hyperparams.values),
            "log": self.log,
            "normal_class": self.normal_class,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "TrainedModel":
        d = json.loads(Path(path).read_text())
        return cls(nets.ModelWeights.from_json_dict(d["tensors"]), nets.NetConfig(**d["net_config"]),
                   gmm.GMMParams.from_dict(d["gmm"]), None,
                   None if d.get("hyperparams") is None else HyperparamVector(d["hyperparams"]),
                   d.get("log", []), d.get("normal_class"))


# ------------------------------------------------------------------- losses

def recon_loss(x, x_rec) -> float:
    x, x_rec = nets._values(x), nets._values(x_rec)
    if x.shape != x_rec.shape:
        raise ValueError(f"recon_loss: shapes {x.shape} and {x_rec.shape} differ")
    return float(np.mean((x - x_rec) ** 2))


def contrastive_loss(o_pos, o_neg):
    """BCE(o_pos, 0) + BCE(o_neg, 1) with clamped probabilities.

    Works on floats, arrays or tensors (elementwise)."""
    if isinstance(o_pos, ad.Tensor) or isinstance(o_neg, ad.Tensor):
        p = ad.clip(o_pos, PROB_CLAMP, 1 - PROB_CLAMP)
        n = ad.clip(o_neg, PROB_CLAMP, 1 - PROB_CLAMP)
        return ad.neg(ad.log(1.0 - p)) - ad.log(n)
    p = np.clip(o_pos, PROB_CLAMP, 1 - PROB_CLAMP)
    n = np.clip(o_neg, PROB_CLAMP, 1 - PROB_CLAMP)
    out = -np.log(1.0 - p) - np.log(n)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class LossParts:
    total: ad.Tensor
    recon: ad.Tensor
    energy: ad.Tensor
    self_sup: ad.Tensor

    def floats(self) -> dict:
        return {"recon": float(self.recon.data), "energy": float(self.energy.data),
                "self": float(self.self_sup.data), "total": float(self.total.data)}


def overall_loss(pos_values, neg_values, weights, cfg: nets.NetConfig,
                 lambda1: float, lambda2: float, eps: float = gmm.EPS) -> LossParts:
    """mean recon + lambda1 * mean energy + lambda2 * mean contrastive loss.

    The GMM parameters inside the energy term come from the batch itself
    (responsibility-weighted moments of the estimation network output).
    Negatives are only encoded and classified.
    """
    B = len(pos_values)
    if B == 0:
        raise ValueError("empty batch")
    use_neg = lambda2 > 0 and neg_values is not None
    batch = nets.pad(list(pos_values) + (list(neg_values) if use_neg else []))
    h_all, states = nets.encode_batch(weights, cfg, batch)
    if cfg.attention == "self":
        h_all, _ = nets.attend_batch(states, batch.mask)
    h = h_all[:B] if use_neg else h_all
    X, M = batch.X[:B], batch.mask[:B]
    xrec = nets.decode_batch(weights, cfg, h, X.shape[1])
    Mx = M[:, :, None]
    per = ad.sum(ad.square((xrec - X) * Mx), axis=(1, 2)) / (batch.lengths[:B] * cfg.channel_dim)
    recon = ad.mean(per)
    z = nets.similarity_batch(X, xrec, M, cfg.sim_kind)
    y = ad.concat([h, z], axis=1)

    total = recon
    if lambda1 > 0:
        gamma = nets.estimate_batch(weights, cfg, y)
        phi, mu, sigma = gmm.m_step_graph(y, gamma, eps)
        energy = ad.mean(gmm.energy_graph(phi, mu, sigma, y))
        total = total + lambda1 * energy
    else:
        energy = ad.Tensor(0.0)
    if use_neg:
        o = nets.classify_batch(weights, cfg, h_all)
        self_sup = ad.mean(contrastive_loss(o[:B], o[B:]))
        total = total + lambda2 * self_sup
    else:
        self_sup = ad.Tensor(0.0)
    return LossParts(total, recon, energy, self_sup)


# --------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm: Optional[float] = None):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict):
        """``grads`` maps parameter name -> gradient array."""
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.clip_norm:
                grads = {k: g * (self.clip_norm / norm) for k, g in grads.items()}
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ------------------------------------------------------------------ training

def _sub_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _chunks(n: int, size: int):
    k = max(1, math.ceil(n / size))
    return np.array_split(np.arange(n), k)


def fit_network(train: Dataset, cfg: nets.NetConfig, tc: TrainConfig, seed: int,
                negatives=None, log_fn=None) -> tuple[nets.ModelWeights, list]:
    bad = [s.id for s in train if not np.all(np.isfinite(s.values))]
    if bad:
        raise ValueError(f"training series with non-finite values: {bad[:5]}")
    s_init, s_neg, s_shuffle = _sub_seeds(seed, 3)
    weights = nets.init_weights(cfg, s_init)
    pos = [s.values for s in train]
    if negatives is None and tc.lambda2 > 0:
        negatives = negatives_for(train, s_neg)
    neg = None if negatives is None else [s.values for s in negatives]
    opt = Adam(weights, tc.learning_rate, clip_norm=tc.clip_norm)
    rng = np.random.default_rng(s_shuffle)
    history = []
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(pos))
        sums = {"recon": 0.0, "energy": 0.0, "self": 0.0, "total": 0.0}
        for idx in _chunks(len(order), tc.batch_size):
            sel = order[idx]
            bp = [pos[i] for i in sel]
            bn = None if neg is None else [neg[i] for i in sel]
            try:
                with ad.Tape() as tape:
                    parts = overall_loss(bp, bn, weights, cfg, tc.lambda1, tc.lambda2)
                if not np.isfinite(parts.total.data):
                    raise TrainingDiverged(epoch)
                ad.backward(parts.total, tape)
            except (FloatingPointError, np.linalg.LinAlgError, gmm.SingularityError) as exc:
                if isinstance(exc, TrainingDiverged):
                    raise
                raise TrainingDiverged(epoch, str(exc)) from exc
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                     for k, p in weights.items()}
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(epoch, "non-finite gradient")
            opt.step(grads)
            for p in weights.values():
                p.grad = None
            for k, v in parts.floats().items():
                sums[k] += v * len(sel)
        entry = {"epoch": epoch, **{k: v / len(pos) for k, v in sums.items()}}
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)
    return weights, history


def _latent_pass(weights, cfg, values_list, chunk: int = 256):
    ys = []
    for idx in _chunks(len(values_list), chunk):
        f = nets.forward(weights, cfg, [values_list[i] for i in idx])
        ys.append(f.y.data)
    return np.concatenate(ys, axis=0)


def frozen_gmm(weights, cfg: nets.NetConfig, train: Dataset) -> gmm.GMMParams:
    Y = _latent_pass(weights, cfg, [s.values for s in train])
    gamma = nets.estimate_batch(weights, cfg, Y).data
    try:
        return gmm.m_step(Y, gamma)
    except np.linalg.LinAlgError as exc:
        raise gmm.SingularityError(str(exc)) from exc


def train_model(pipeline: PipelineConfig, hp: HyperparamVector, splits: SplitDataset,
                tc: TrainConfig, log_fn=None) -> TrainedModel:
    """Train the network for one pipeline/hyperparameter choice.

    Only ``splits.train`` is touched; its labels are never read.
    """
    s_aug, s_fit = _sub_seeds(tc.seed, 2)
    cfg, aug = build_configs(pipeline, hp, splits.train.channel_dim, seed=s_aug)
    train = augment_dataset(splits.train, aug)
    weights, history = fit_network(train, cfg, tc, s_fit, log_fn=log_fn)
    params = frozen_gmm(weights, cfg, train)
    if not (np.all(np.isfinite(params.mu)) and np.all(np.isfinite(params.sigma))):
        raise TrainingDiverged(tc.epochs, "non-finite GMM parameters")
    return TrainedModel(weights, cfg, params, pipeline, hp, history, splits.normal_class)


def latents(model: TrainedModel, data) -> np.ndarray:
    vals = [s.values for s in data]
    return _latent_pass(model.weights, model.net_config, vals)


def score_many(model: TrainedModel, data) -> np.ndarray:
    Y = latents(model, data)
    return gmm.energies(model.gmm, Y)


def score(model: TrainedModel, series) -> float:
    if series.D != model.net_config.channel_dim:
        raise ValueError(f"series has {series.D} channels, model expects {model.net_config.channel_dim}")
    return float(score_many(model, [series])[0])


def objective(model: TrainedModel, val: Dataset, task: str = "anomaly", seed: int = 0) -> float:
    labels = val.labels
    if task == "anomaly":
        if len(set(labels.tolist())) < 2:
            raise MetricError("AUC undefined: validation split holds a single class")
        return auc(score_many(model, val), labels)
    if task == "cluster":
        k = len(set(labels.tolist()))
        pred = assign_latents(latents(model, val), k, seed)
        return nmi(pred, labels)
    raise ValueError(f"unknown task {task!r}")


def log_jsonl(path):
    fh = open(path, "a")

    def write(entry):
        fh.write(json.dumps(entry) + "\n")
        fh.flush()

    return write
