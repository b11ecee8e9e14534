"""Gaussian-process Bayesian optimization over a unit hypercube.

Zero-mean GP on standardized objective values with an ARD Matern-5/2
kernel; kernel hyperparameters by multi-start coordinate search on the
negative log marginal likelihood; expected improvement maximized by a
random candidate scan.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.stats import norm

from .space import HyperparamVector

NOISE_FLOOR = 1e-8
_SQRT5 = math.sqrt(5.0)
# log-space box for every kernel hyperparameter
_LOG_BOUNDS = (math.log(1e-3), math.log(1e3))
_LOG_NOISE_BOUNDS = (math.log(NOISE_FLOOR), math.log(1e1))


class GPFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelParams:
    tau0: float
    taus: tuple
    noise: float

    def __post_init__(self):
        if self.tau0 <= 0 or any(t <= 0 for t in self.taus):
            raise ValueError("kernel scales must be positive")

    def to_log(self) -> np.ndarray:
        return np.log(np.r_[self.tau0, self.taus, self.noise])

    @classmethod
    def from_log(cls, v) -> "KernelParams":
        v = np.exp(np.asarray(v, float))
        return cls(float(v[0]), tuple(float(t) for t in v[1:-1]), float(max(v[-1], NOISE_FLOOR)))

    @classmethod
    def default(cls, d: int) -> "KernelParams":
        return cls(1.0, (1.0,) * d, 0.01)


def kernel_matrix(P, Q, psi: KernelParams) -> np.ndarray:
    P, Q = np.atleast_2d(P), np.atleast_2d(Q)
    taus = np.asarray(psi.taus)
    if np.any(taus <= 0):
        raise ValueError("length scales must be positive")
    diff = (P[:, None, :] - Q[None, :, :]) / taus
    r = np.sqrt(np.maximum((diff ** 2).sum(axis=-1), 0.0))
    return psi.tau0 ** 2 * np.exp(-_SQRT5 * r) * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r)


def kernel(p, p_prime, psi: KernelParams) -> float:
    p, p_prime = np.asarray(p, float), np.asarray(p_prime, float)
    if p.shape != p_prime.shape:
        raise ValueError("points differ in dimension")
    return float(kernel_matrix(p[None], p_prime[None], psi)[0, 0])


def nll(P, v, psi: KernelParams) -> float:
    """log det(K + s I) + v^T (K + s I)^-1 v; +inf when not positive definite."""
    K = kernel_matrix(P, P, psi) + psi.noise * np.eye(len(P))
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return math.inf
    alpha = solve_triangular(L, v, lower=True)
    return float(2.0 * np.log(np.diag(L)).sum() + alpha @ alpha)


@dataclass
class GPState:
    points: np.ndarray
    values: np.ndarray
    psi: KernelParams
    y_mean: float = 0.0
    y_std: float = 1.0
    chol: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)
    nll: float = math.nan

    @property
    def v(self) -> np.ndarray:
        """Standardized observations."""
        return (self.values - self.y_mean) / self.y_std


def _standardize(values):
    m = float(np.mean(values))
    s = float(np.std(values))
    return m, (s if s > 1e-12 else 1.0)


def _coordinate_search(P, v, x0, bounds, max_sweeps=30):
    x = np.array(x0, float)
    best = nll(P, v, KernelParams.from_log(x))
    step = np.full(len(x), 1.0)
    for _ in range(max_sweeps):
        improved = False
        for k in range(len(x)):
            for direction in (1.0, -1.0):
                while True:
                    trial = x.copy()
                    trial[k] = np.clip(trial[k] + direction * step[k], *bounds[k])
                    if trial[k] == x[k]:
                        break
                    f = nll(P, v, KernelParams.from_log(trial))
                    if f < best - 1e-12:
                        x, best, improved = trial, f, True
                        step[k] *= 1.5
                    else:
                        break
            step[k] *= 0.5
        if not improved and step.max() < 1e-3:
            break
    return x, best


def fit_gp(points, values, restarts: int = 5, seed: int = 0) -> GPState:
    """Fit kernel hyperparameters by minimizing the negative log marginal likelihood."""
    P = np.atleast_2d(np.asarray(points, float))
    values = np.asarray(values, float)
    if len(P) < 2:
        raise GPFitError("need at least two observations")
    y_mean, y_std = _standardize(values)
    v = (values - y_mean) / y_std
    d = P.shape[1]
    bounds = [_LOG_BOUNDS] * (d + 1) + [_LOG_NOISE_BOUNDS]
    rng = np.random.default_rng(seed)
    starts = [KernelParams.default(d).to_log()]
    for _ in range(max(0, restarts - 1)):
        starts.append(np.r_[rng.uniform(-1, 1), rng.uniform(-2.5, 1, size=d), rng.uniform(-9, -1)])
    best_x, best_f = None, math.inf
    for x0 in starts:
        if not math.isfinite(nll(P, v, KernelParams.from_log(x0))):
            continue
        x, f = _coordinate_search(P, v, x0, bounds)
        if f < best_f:
            best_x, best_f = x, f
    if best_x is None:
        raise GPFitError("every start produced a non positive definite system")
    return _condition(P, values, KernelParams.from_log(best_x), y_mean, y_std)


def _condition(P, values, psi, y_mean=None, y_std=None) -> GPState:
    if y_mean is None:
        y_mean, y_std = _standardize(values)
    v = (values - y_mean) / y_std
    K = kernel_matrix(P, P, psi) + psi.noise * np.eye(len(P))
    L = cholesky(K, lower=True)
    alpha = cho_solve((L, True), v)
    f = float(2.0 * np.log(np.diag(L)).sum() + v @ alpha)
    return GPState(P, np.asarray(values, float), psi, y_mean, y_std, L, alpha, f)


def condition(points, values, psi: KernelParams, standardize: bool = True) -> GPState:
    """GP with fixed kernel hyperparameters (no fitting)."""
    P = np.atleast_2d(np.asarray(points, float))
    values = np.asarray(values, float)
    if standardize:
        return _condition(P, values, psi)
    return _condition(P, values, psi, 0.0, 1.0)


def posterior(gp: GPState, p_star) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance on the original objective scale."""
    Ps = np.atleast_2d(np.asarray(p_star, float))
    k = kernel_matrix(gp.points, Ps, gp.psi)                  # (n, m)
    mu = k.T @ gp.alpha
    w = solve_triangular(gp.chol, k, lower=True)
    var = gp.psi.tau0 ** 2 - (w * w).sum(axis=0)
    var = np.maximum(var, 0.0)
    mu = gp.y_mean + gp.y_std * mu
    var = var * gp.y_std ** 2
    if np.ndim(p_star) == 1:
        return float(mu[0]), float(var[0])
    return mu, var


def expected_improvement(mu, sigma, y_plus):
    """EI for maximization from posterior mean and standard deviation."""
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    imp = mu - y_plus
    safe = np.where(sigma > 1e-12, sigma, 1.0)
    z = imp / safe
    ei = imp * norm.cdf(z) + safe * norm.pdf(z)
    out = np.where(sigma > 1e-12, np.maximum(ei, 0.0), np.maximum(imp, 0.0))
    return float(out) if out.ndim == 0 else out


def ei_at(gp: GPState, p_star, y_plus: float | None = None):
    if y_plus is None:
        y_plus = float(np.max(gp.values))
    mu, var = posterior(gp, p_star)
    return expected_improvement(mu, np.sqrt(var), y_plus)


@dataclass
class Observation:
    point: list
    values: dict
    f: float

    def to_dict(self) -> dict:
        return {"point": self.point, "values": self.values, "f": self.f}


class BayesOpt:
    """Sequential EI optimizer over the unit cube of ``domains``.

    The first ``n_init`` proposals are uniform random; after that a GP is
    refit on every call.
    """

    def __init__(self, domains, n_candidates: int = 1000, n_init: int = 2, restarts: int = 5):
        self.domains = tuple(domains)
        self.n_candidates = n_candidates
        self.n_init = n_init
        self.restarts = restarts
        self.history: list[Observation] = []

    @property
    def dim(self) -> int:
        return len(self.domains)

    def propose(self, seed) -> tuple[np.ndarray, HyperparamVector]:
        rng = np.random.default_rng(seed)
        d = self.dim
        if d == 0:
            return np.zeros(0), HyperparamVector({}, ())
        if len(self.history) < self.n_init:
            p = rng.random(d)
        else:
            P = np.array([o.point for o in self.history])
            f = np.array([o.f for o in self.history])
            fit_seed = int(rng.integers(2**31 - 1))
            cand = rng.random((self.n_candidates, d))
            try:
                gp = fit_gp(P, f, self.restarts, fit_seed)
            except GPFitError:
                p = cand[0]
            else:
                p = cand[int(np.argmax(ei_at(gp, cand, float(f.max()))))]
        return p, HyperparamVector.from_unit(p, self.domains)

    def observe(self, p, hp: HyperparamVector, f: float):
        self.history.append(Observation([float(x) for x in p], dict(hp.values), float(f)))


def propose(gp: GPState | None, domains, n_candidates: int = 1000, seed=0) -> HyperparamVector:
    """One EI-maximizing proposal (uniform random when ``gp`` is None)."""
    rng = np.random.default_rng(seed)
    d = len(domains)
    if gp is None:
        return HyperparamVector.from_unit(rng.random(d), tuple(domains))
    cand = rng.random((n_candidates, d))
    ei = ei_at(gp, cand, float(np.max(gp.values)))
    return HyperparamVector.from_unit(cand[int(np.argmax(ei))], tuple(domains))
