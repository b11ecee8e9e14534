"""Gaussian mixture parameters from soft assignments, and sample energy.

The same graph-level functions serve training (inputs are tensors carrying
gradients) and scoring (plain arrays wrapped as constants).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

EPS = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


class SingularityError(ArithmeticError):
    """A covariance matrix stayed non-positive-definite after regularization."""


@dataclass(frozen=True)
class GMMParams:
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    eps: float = EPS

    @property
    def H(self) -> int:
        return len(self.phi)

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def to_dict(self) -> dict:
        return {"phi": self.phi.tolist(), "mu": self.mu.tolist(),
                "sigma": self.sigma.tolist(), "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "GMMParams":
        return cls(np.asarray(d["phi"], float), np.asarray(d["mu"], float),
                   np.asarray(d["sigma"], float), float(d["eps"]))


def m_step_graph(Y, Gamma, eps: float = EPS):
    """Responsibility-weighted moments as tensors: (phi, mu, sigma).

    ``Y`` is (N, d), ``Gamma`` is (N, H). Components whose total
    responsibility is below 1e-12 fall back to the batch mean and identity
    covariance.
    """
    Y, Gamma = ad.as_tensor(Y), ad.as_tensor(Gamma)
    N, d = Y.shape
    H = Gamma.shape[1]
    gsum = ad.sum(Gamma, axis=0)                                   # (H,)
    empty = gsum.data < 1e-12
    keep = (~empty).astype(float)
    phi = gsum / float(N)
    # empty components: divide by 1 and swap in fallbacks below
    safe = gsum + empty.astype(float)
    mu = ad.matmul(ad.transpose(Gamma), Y) / ad.reshape(safe, (H, 1))   # (H, d)
    if empty.any():
        batch_mean = ad.mean(Y, axis=0, keepdims=True)
        mu = mu * keep[:, None] + batch_mean * empty[:, None].astype(float)
    diff = ad.reshape(Y, (1, N, d)) - ad.reshape(mu, (H, 1, d))        # (H, N, d)
    weighted = diff * ad.reshape(ad.transpose(Gamma), (H, N, 1))
    scatter = ad.matmul(ad.transpose(weighted, (0, 2, 1)), diff)       # (H, d, d)
    sigma = scatter / ad.reshape(safe, (H, 1, 1)) + eps * np.eye(d)
    if empty.any():
        sigma = sigma * keep[:, None, None] + np.eye(d) * empty[:, None, None].astype(float)
    return phi, mu, sigma


def component_log_density(phi, mu, sigma, Y):
    """log(phi_h) + log N(y_i | mu_h, sigma_h) as an (N, H) tensor."""
    phi, mu, sigma, Y = (ad.as_tensor(t) for t in (phi, mu, sigma, Y))
    N, d = Y.shape
    H = mu.shape[0]
    try:
        prec = ad.inv_spd(sigma)
        logdet = ad.logdet_spd(sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(str(exc)) from exc
    diff = ad.reshape(Y, (1, N, d)) - ad.reshape(mu, (H, 1, d))
    maha = ad.sum(ad.matmul(diff, prec) * diff, axis=-1)            # (H, N)
    with np.errstate(divide="ignore"):
        logphi = ad.log(phi)
    comp = ad.reshape(logphi, (H, 1)) - 0.5 * maha - 0.5 * ad.reshape(logdet + d * _LOG_2PI, (H, 1))
    return ad.transpose(comp)


def energy_graph(phi, mu, sigma, Y):
    """Sample energies -log sum_h phi_h N(y | mu_h, sigma_h), shape (N,)."""
    return ad.neg(ad.logsumexp(component_log_density(phi, mu, sigma, Y), axis=-1))


def _check_simplex(Gamma: np.ndarray):
    if Gamma.ndim != 2:
        raise ValueError(f"responsibilities must be 2-d, got shape {Gamma.shape}")
    bad = (np.abs(Gamma.sum(axis=1) - 1.0) > 1e-8) | (Gamma < -1e-12).any(axis=1)
    if bad.any():
        raise ValueError(f"responsibility row {int(np.argmax(bad))} is not on the simplex")


def m_step(Y, Gamma, eps: float = EPS) -> GMMParams:
    Y = np.atleast_2d(np.asarray(Y, float))
    Gamma = np.atleast_2d(np.asarray(Gamma, float))
    if len(Y) < 1:
        raise ValueError("m_step needs at least one sample")
    if len(Y) != len(Gamma):
        raise ValueError(f"{len(Y)} samples but {len(Gamma)} responsibility rows")
    _check_simplex(Gamma)
    phi, mu, sigma = m_step_graph(Y, Gamma, eps)
    return GMMParams(phi.data.copy(), mu.data.copy(), sigma.data.copy(), eps)


def energies(params: GMMParams, Y) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(Y, float))
    if Y.shape[1] != params.dim:
        raise ValueError(f"latent dim {Y.shape[1]} != GMM dim {params.dim}")
    return energy_graph(params.phi, params.mu, params.sigma, Y).data.copy()


def energy(params: GMMParams, y) -> float:
    return float(energies(params, np.reshape(np.asarray(y, float), (1, -1)))[0])


def responsibilities(params: GMMParams, Y) -> tuple[np.ndarray, float]:
    """Posterior component memberships and total log-likelihood."""
    logp = component_log_density(params.phi, params.mu, params.sigma, np.atleast_2d(Y)).data
    m = logp.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logp - m).sum(axis=1))
    return np.exp(logp - lse[:, None]), float(lse.sum())


@dataclass
class EMResult:
    params: GMMParams
    log_likelihood: list = field(default_factory=list)
    reverted: bool = False


def _seed_means(src: np.ndarray, H: int, rng) -> np.ndarray:
    """k-means++ seeding: H distinct rows, each drawn with probability
    proportional to the squared distance from the rows already chosen."""
    idx = [int(rng.integers(len(src)))]
    d2 = ((src - src[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, H):
        w = d2.copy()
        w[idx] = 0.0
        if w.sum() <= 0:
            rest = np.setdiff1d(np.arange(len(src)), idx)
            nxt = int(rng.choice(rest))
        else:
            nxt = int(rng.choice(len(src), p=w / w.sum()))
        idx.append(nxt)
        d2 = np.minimum(d2, ((src - src[nxt]) ** 2).sum(axis=1))
    return src[idx].copy()


def fit_em(Y, H: int, iters: int = 100, seed: int = 0, eps: float = EPS,
           tol: float = 1e-8, return_history: bool = False):
    """Plain EM started from H distinct data points (k-means++ seeding)."""
    Y = np.atleast_2d(np.asarray(Y, float))
    N, d = Y.shape
    if N < H:
        raise ValueError(f"fit_em needs N >= H, got N={N}, H={H}")
    rng = np.random.default_rng(seed)
    uniq = np.unique(Y, axis=0)
    src = uniq if len(uniq) >= H else Y
    mu0 = _seed_means(src, H, rng)
    # pooled within-cluster covariance of the nearest-mean partition
    assign = ((Y[:, None, :] - mu0[None]) ** 2).sum(-1).argmin(axis=1)
    resid = Y - mu0[assign]
    cov0 = resid.T @ resid / N + eps * np.eye(d)
    counts = np.bincount(assign, minlength=H) + 1.0
    params = GMMParams(counts / counts.sum(), mu0, np.repeat(cov0[None], H, axis=0), eps)
    history = []
    reverted = False
    prev = None
    for _ in range(max(1, iters)):
        gamma, ll = responsibilities(params, Y)
        if history and ll < history[-1]:
            # the eps ridge makes the M-step inexact; keep the better iterate
            params, reverted = prev, True
            break
        gain = ll - history[-1] if history else np.inf
        history.append(ll)
        if gain < tol:
            break
        prev, params = params, m_step(Y, gamma, eps)
    else:
        ll = responsibilities(params, Y)[1]
        if ll < history[-1]:
            params, reverted = prev, True
        else:
            history.append(ll)
    if return_history:
        return EMResult(params, history, reverted)
    return params
