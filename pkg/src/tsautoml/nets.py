"""Recurrent autoencoder, self-attention, similarity features, and the two
small feed-forward heads (mixture-membership estimator and the auxiliary
positive/negative classifier).

All forward functions work on padded batches so that a single tape covers a
whole mini-batch; per-series convenience wrappers sit at the bottom.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CELLS = ("rnn", "lstm", "gru")
ATTENTION = ("none", "self")
SIMILARITY = ("rel_euclid", "cosine", "both")
_GATES = {"rnn": 1, "gru": 3, "lstm": 4}
NORM_FLOOR = 1e-12


class NetError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    encoder_kind: str = "gru"
    decoder_kind: str = "gru"
    attention: str = "none"
    h_enc: int = 8
    h_dec: int = 8
    sim_kind: str = "both"
    est_layers: int = 1
    est_nodes: int = 16
    clas_layers: int = 1
    clas_nodes: int = 16
    H: int = 2
    channel_dim: int = 1

    def __post_init__(self):
        D = self.channel_dim
        checks = [
            (self.encoder_kind in CELLS, f"encoder_kind {self.encoder_kind!r}"),
            (self.decoder_kind in CELLS, f"decoder_kind {self.decoder_kind!r}"),
            (self.attention in ATTENTION, f"attention {self.attention!r}"),
            (self.sim_kind in SIMILARITY, f"sim_kind {self.sim_kind!r}"),
            (1 <= self.h_enc <= 32, f"h_enc {self.h_enc} outside [1, 32]"),
            (1 <= self.est_layers <= 5, f"est_layers {self.est_layers} outside [1, 5]"),
            (8 <= self.est_nodes <= 128, f"est_nodes {self.est_nodes} outside [8, 128]"),
            (1 <= self.clas_layers <= 5, f"clas_layers {self.clas_layers} outside [1, 5]"),
            (8 <= self.clas_nodes <= 128, f"clas_nodes {self.clas_nodes} outside [8, 128]"),
            (self.H >= 1, f"H {self.H} must be >= 1"),
            (D >= 1, f"channel_dim {D} must be >= 1"),
        ]
        lo, hi = dec_bounds(D)
        checks.append((lo <= self.h_dec <= hi, f"h_dec {self.h_dec} outside [{lo}, {hi}]"))
        for ok, msg in checks:
            if not ok:
                raise NetError(msg)

    @property
    def S(self) -> int:
        return self.h_enc

    @property
    def z_dim(self) -> int:
        return 2 if self.sim_kind == "both" else 1

    @property
    def latent_dim(self) -> int:
        return self.S + self.z_dim


def dec_bounds(D: int) -> tuple[int, int]:
    return (1, 32) if D == 1 else (D, 4 * D)


class ModelWeights(dict):
    """Named parameter tensors (name -> Tensor with requires_grad)."""

    def arrays(self) -> dict:
        return {k: v.data for k, v in self.items()}

    def to_json_dict(self) -> dict:
        return {k: {"shape": list(v.shape), "data": v.data.reshape(-1).tolist()}
                for k, v in sorted(self.items())}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelWeights":
        return cls({k: Tensor(np.asarray(v["data"], float).reshape(v["shape"]), requires_grad=True)
                    for k, v in d.items()})

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.items()})


def init_weights(cfg: NetConfig, seed: int = 0) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, biases included."""
    rng = np.random.default_rng(seed)
    D, S, Hd = cfg.channel_dim, cfg.h_enc, cfg.h_dec
    shapes = {}
    ge, gd = _GATES[cfg.encoder_kind], _GATES[cfg.decoder_kind]
    shapes["enc.Wx"] = ((D, ge * S), S)
    shapes["enc.Wh"] = ((S, ge * S), S)
    shapes["enc.b"] = ((ge * S,), S)
    shapes["dec.P"] = ((S, Hd), S)
    shapes["dec.Pb"] = ((Hd,), S)
    shapes["dec.Wx"] = ((D, gd * Hd), Hd)
    shapes["dec.Wh"] = ((Hd, gd * Hd), Hd)
    shapes["dec.b"] = ((gd * Hd,), Hd)
    shapes["dec.Wo"] = ((Hd, D), Hd)
    shapes["dec.bo"] = ((D,), Hd)
    width = cfg.latent_dim
    for i in range(cfg.est_layers):
        shapes[f"est.W{i}"] = ((width, cfg.est_nodes), width)
        shapes[f"est.b{i}"] = ((cfg.est_nodes,), width)
        width = cfg.est_nodes
    shapes["est.Wout"] = ((width, cfg.H), width)
    shapes["est.bout"] = ((cfg.H,), width)
    width = S
    for i in range(cfg.clas_layers):
        shapes[f"clas.W{i}"] = ((width, cfg.clas_nodes), width)
        shapes[f"clas.b{i}"] = ((cfg.clas_nodes,), width)
        width = cfg.clas_nodes
    shapes["clas.Wout"] = ((width, 1), width)
    shapes["clas.bout"] = ((1,), width)
    w = ModelWeights()
    for name, (shape, fan_in) in shapes.items():
        bound = 1.0 / math.sqrt(fan_in)
        w[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    # LSTM forget gates start open (bias +1) so early steps are not forgotten
    if cfg.encoder_kind == "lstm":
        w["enc.b"].data[S:2 * S] += 1.0
    if cfg.decoder_kind == "lstm":
        w["dec.b"].data[Hd:2 * Hd] += 1.0
    return w


# ----------------------------------------------------------------- batching

@dataclass
class Batch:
    X: np.ndarray          # (B, Tmax, D), zero padded
    lengths: np.ndarray    # (B,)
    mask: np.ndarray       # (B, Tmax) of 0/1

    @property
    def ragged(self) -> bool:
        return bool(np.any(self.lengths != self.X.shape[1]))


def pad(values_list) -> Batch:
    values_list = [v if getattr(v, "ndim", 0) == 2 else _values(v) for v in values_list]
    lengths = np.array([len(v) for v in values_list])
    if np.any(lengths < 1):
        raise NetError("every series needs T >= 1")
    B, Tm, D = len(values_list), int(lengths.max()), values_list[0].shape[1]
    X = np.zeros((B, Tm, D))
    for i, v in enumerate(values_list):
        if v.shape[1] != D:
            raise NetError("mixed channel dims in one batch")
        X[i, :len(v)] = v
    mask = (np.arange(Tm)[None, :] < lengths[:, None]).astype(float)
    return Batch(X, lengths, mask)


# ------------------------------------------------------------------- cells
#
# Each recurrent step is a single tape node with a hand-written backward.
# LSTM carries its state as [h, c] in one (B, 2n) array.

def _sig(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def state_width(kind: str, n: int) -> int:
    return 2 * n if kind == "lstm" else n


def hidden_of(kind: str, s, n: int):
    return s[:, :n] if kind == "lstm" else s


def _linear_grads(dg, x, hp, Wx, Wh):
    return dg @ Wx.T, dg @ Wh.T, x.T @ dg, hp.T @ dg, dg.sum(axis=0)


def cell_step(kind: str, x, s, Wx, Wh, b, mask=None):
    """One recurrent step ``s -> s'``; rows with ``mask == 0`` keep ``s``."""
    x, s = ad.as_tensor(x), ad.as_tensor(s)
    xd, sd, Wxd, Whd, bd = x.data, s.data, Wx.data, Wh.data, b.data
    n = Whd.shape[0]
    hp = sd[:, :n] if kind == "lstm" else sd
    pre = xd @ Wxd + bd
    hg = hp @ Whd
    if kind == "rnn":
        out = np.tanh(pre + hg)

        def local(g):
            da = g * (1.0 - out * out)
            dx, dh, dWx, dWh, db = _linear_grads(da, xd, hp, Wxd, Whd)
            return dx, dh, dWx, dWh, db
    elif kind == "gru":
        zr = _sig(pre[:, :2 * n] + hg[:, :2 * n])
        z, r = zr[:, :n], zr[:, n:]
        hn = hg[:, 2 * n:]
        cand = np.tanh(pre[:, 2 * n:] + r * hn)
        out = cand + z * (hp - cand)

        def local(g):
            dz = g * (hp - cand)
            da = g * (1.0 - z) * (1.0 - cand * cand)
            dzr = np.concatenate([dz, da * hn], axis=1) * zr * (1.0 - zr)
            dpre = np.concatenate([dzr, da], axis=1)
            dhg = np.concatenate([dzr, da * r], axis=1)
            dx, dWx, db = dpre @ Wxd.T, xd.T @ dpre, dpre.sum(axis=0)
            dh, dWh = dhg @ Whd.T + g * z, hp.T @ dhg
            return dx, dh, dWx, dWh, db
    elif kind == "lstm":
        cp = sd[:, n:]
        gates = pre + hg
        sg = _sig(gates)
        i, f, o = sg[:, :n], sg[:, n:2 * n], sg[:, 3 * n:]
        gt = np.tanh(gates[:, 2 * n:3 * n])
        c = f * cp + i * gt
        tc = np.tanh(c)
        out = np.concatenate([o * tc, c], axis=1)

        def local(g):
            gh, gc = g[:, :n], g[:, n:]
            dc = gc + gh * o * (1.0 - tc * tc)
            dg = np.concatenate([dc * gt * i * (1.0 - i), dc * cp * f * (1.0 - f),
                                 dc * i * (1.0 - gt * gt), gh * tc * o * (1.0 - o)], axis=1)
            dx, dh, dWx, dWh, db = _linear_grads(dg, xd, hp, Wxd, Whd)
            ds = np.concatenate([dh, dc * f], axis=1)
            return dx, ds, dWx, dWh, db
    else:
        raise NetError(f"unknown cell {kind!r}")

    m = None if mask is None or np.all(mask) else np.asarray(mask, float).reshape(-1, 1)
    held = out if m is None else m * out + (1.0 - m) * sd

    def bw(g):
        gl = g if m is None else g * m
        dx, ds, dWx, dWh, db = local(gl)
        if m is not None:
            ds = ds + g * (1.0 - m)
        return dx, ds, dWx, dWh, db

    return ad.custom(held, (x, s, Wx, Wh, b), bw)


def encode_batch(weights, cfg: NetConfig, batch: Batch, keep_states: bool | None = None):
    """Unroll the encoder. Returns (h_final, states) with states (B, T, S) or None.

    Padded steps hold the previous state, so the final state of every series
    is its state after its own last observation.
    """
    B, Tm, _ = batch.X.shape
    S, kind = cfg.h_enc, cfg.encoder_kind
    if keep_states is None:
        keep_states = cfg.attention == "self"
    s = Tensor(np.zeros((B, state_width(kind, S))))
    Wx, Wh, b = weights["enc.Wx"], weights["enc.Wh"], weights["enc.b"]
    states = []
    for t in range(Tm):
        s = cell_step(kind, batch.X[:, t, :], s, Wx, Wh, b, batch.mask[:, t])
        if not np.all(np.isfinite(s.data)):
            raise FloatingPointError(f"non-finite encoder state at step {t}")
        if keep_states:
            states.append(hidden_of(kind, s, S))
    h = hidden_of(kind, s, S)
    return h, (ad.stack(states, axis=1) if keep_states else None)


def attend_batch(states, mask: np.ndarray, query=None):
    """Scaled dot-product attention with the last valid state as query."""
    states = ad.as_tensor(states)
    B, Tm, S = states.shape
    if query is None:
        last = np.asarray(mask).sum(axis=1).astype(int) - 1
        query = states[np.arange(B), last]
    scores = ad.sum(states * ad.reshape(query, (B, 1, S)), axis=-1) / math.sqrt(S)
    scores = scores + np.where(np.asarray(mask) > 0, 0.0, -1e30)
    w = ad.softmax(scores)
    return ad.sum(states * ad.reshape(w, (B, Tm, 1)), axis=1), w


def decode_batch(weights, cfg: NetConfig, h, Tm: int):
    """Autoregressive decoder seeded from a projection of ``h``; (B, Tm, D)."""
    h = ad.as_tensor(h)
    B = h.shape[0]
    n, D, kind = cfg.h_dec, cfg.channel_dim, cfg.decoder_kind
    s = ad.tanh(ad.matmul(h, weights["dec.P"]) + weights["dec.Pb"])
    if kind == "lstm":
        s = ad.concat([s, np.zeros((B, n))], axis=1)
    x = Tensor(np.zeros((B, D)))
    Wx, Wh, b = weights["dec.Wx"], weights["dec.Wh"], weights["dec.b"]
    Wo, bo = weights["dec.Wo"], weights["dec.bo"]
    outs = []
    for t in range(Tm):
        s = cell_step(kind, x, s, Wx, Wh, b)
        x = ad.matmul(hidden_of(kind, s, n), Wo) + bo
        if not np.all(np.isfinite(x.data)):
            raise FloatingPointError(f"non-finite decoder output at step {t}")
        outs.append(x)
    return ad.stack(outs, axis=1)


def _norm(t):
    return ad.sqrt(ad.clip(t, lo=NORM_FLOOR ** 2))


def similarity_batch(X: np.ndarray, xrec, mask: np.ndarray, kind: str):
    """Per-series similarity features over the valid steps; (B, 1 or 2)."""
    M = np.asarray(mask)[:, :, None]
    xr = xrec * M
    Xc = X * M
    feats = []
    nx = _norm(ad.sum(ad.square(ad.as_tensor(Xc)), axis=(1, 2)))
    if kind in ("rel_euclid", "both"):
        nd = _norm(ad.sum(ad.square(xr - Xc), axis=(1, 2)))
        feats.append(nd / nx)
    if kind in ("cosine", "both"):
        nr = _norm(ad.sum(ad.square(xr), axis=(1, 2)))
        dot = ad.sum(xr * Xc, axis=(1, 2))
        feats.append(dot / (nx * nr))
    B = X.shape[0]
    return ad.concat([ad.reshape(f, (B, 1)) for f in feats], axis=1)


def _mlp(weights, prefix, layers, x):
    for i in range(layers):
        x = ad.tanh(ad.matmul(x, weights[f"{prefix}.W{i}"]) + weights[f"{prefix}.b{i}"])
    return ad.matmul(x, weights[f"{prefix}.Wout"]) + weights[f"{prefix}.bout"]


def estimate_batch(weights, cfg: NetConfig, Y):
    return ad.softmax(_mlp(weights, "est", cfg.est_layers, ad.as_tensor(Y)))


def classify_batch(weights, cfg: NetConfig, h):
    """Probability that each row of ``h`` comes from a negative sample; (B,)."""
    out = ad.sigmoid(_mlp(weights, "clas", cfg.clas_layers, ad.as_tensor(h)))
    return ad.reshape(out, (out.shape[0],))


@dataclass
class Forward:
    h: Tensor
    xrec: Tensor
    z: Tensor
    y: Tensor
    batch: Batch


def forward(weights, cfg: NetConfig, values_list) -> Forward:
    """Encoder -> (attention) -> decoder -> similarity -> latent y = [h; z]."""
    batch = pad(values_list)
    h, states = encode_batch(weights, cfg, batch)
    if cfg.attention == "self":
        h, _ = attend_batch(states, batch.mask)
    xrec = decode_batch(weights, cfg, h, batch.X.shape[1])
    z = similarity_batch(batch.X, xrec, batch.mask, cfg.sim_kind)
    y = ad.concat([h, z], axis=1)
    return Forward(h, xrec, z, y, batch)


def encode_only(weights, cfg: NetConfig, values_list) -> Tensor:
    batch = pad(values_list)
    h, states = encode_batch(weights, cfg, batch)
    if cfg.attention == "self":
        h, _ = attend_batch(states, batch.mask)
    return h


# ---------------------------------------------------- single-series wrappers

def _values(series):
    v = getattr(series, "values", series)
    v = np.asarray(v, float)
    return v[:, None] if v.ndim == 1 else v


def encode(weights, cfg: NetConfig, series):
    """Final hidden state (length h_enc) and the per-step states."""
    batch = pad([_values(series)])
    h, states = encode_batch(weights, cfg, batch, keep_states=True)
    return h.data[0].copy(), states.data[0].copy()


def attend(states) -> np.ndarray:
    st = np.asarray(states, float)
    out, _ = attend_batch(st[None], np.ones((1, len(st))))
    return out.data[0].copy()


def decode(weights, cfg: NetConfig, h, T: int) -> np.ndarray:
    if T < 1:
        raise NetError("decode needs T >= 1")
    return decode_batch(weights, cfg, np.asarray(h, float)[None], T).data[0].copy()


def similarity(x, x_rec, kind: str) -> np.ndarray:
    x, x_rec = _values(x), _values(x_rec)
    if x.shape != x_rec.shape:
        raise NetError(f"similarity: shapes {x.shape} and {x_rec.shape} differ")
    return similarity_batch(x[None], x_rec[None], np.ones((1, len(x))), kind).data[0].copy()


def estimate(weights, cfg: NetConfig, y) -> np.ndarray:
    y = np.asarray(y, float)
    if y.shape != (cfg.latent_dim,):
        raise NetError(f"estimate: expected latent of length {cfg.latent_dim}, got {y.shape}")
    return estimate_batch(weights, cfg, y[None]).data[0].copy()


def classify(weights, cfg: NetConfig, h) -> float:
    h = np.asarray(h, float)
    if h.shape != (cfg.S,):
        raise NetError(f"classify: expected h of length {cfg.S}, got {h.shape}")
    return float(classify_batch(weights, cfg, h[None]).data[0])


def save_model_json(path, cfg: NetConfig, weights: ModelWeights, extra: dict | None = None):
    doc = {"net_config": asdict(cfg), "tensors": weights.to_json_dict()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True))
