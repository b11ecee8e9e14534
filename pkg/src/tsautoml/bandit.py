"""Thompson sampling over pipeline options with per-option Beta posteriors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .space import PipelineConfig, SearchSpace

PRIOR_ALPHA = 10.0
PRIOR_BETA = 10.0


@dataclass(frozen=True)
class RewardConfig:
    f_low: float
    f_upp: float

    def __post_init__(self):
        if not self.f_low < self.f_upp:
            raise ValueError(f"need f_low < f_upp, got {self.f_low}, {self.f_upp}")

    @classmethod
    def for_task(cls, task: str) -> "RewardConfig":
        # AUC of 0.5 is chance level; NMI already lives on [0, 1]
        return cls(0.5, 1.0) if task == "anomaly" else cls(0.0, 1.0)


@dataclass
class BetaState:
    alpha: list
    beta: list
    alpha0: float = PRIOR_ALPHA
    beta0: float = PRIOR_BETA

    @classmethod
    def initial(cls, sizes, alpha0: float = PRIOR_ALPHA, beta0: float = PRIOR_BETA) -> "BetaState":
        return cls([np.full(q, float(alpha0)) for q in sizes],
                   [np.full(q, float(beta0)) for q in sizes], alpha0, beta0)

    @property
    def sizes(self) -> list:
        return [len(a) for a in self.alpha]

    def copy(self) -> "BetaState":
        return BetaState([a.copy() for a in self.alpha], [b.copy() for b in self.beta],
                         self.alpha0, self.beta0)

    def to_dict(self, space: SearchSpace | None = None) -> dict:
        names = [m.name for m in space.modules] if space else [str(i) for i in range(len(self.alpha))]
        return {n: {"alpha": a.tolist(), "beta": b.tolist()}
                for n, a, b in zip(names, self.alpha, self.beta)}


def sample_config(state: BetaState, seed, space: SearchSpace | None = None) -> PipelineConfig:
    """Draw w_i ~ Beta(alpha_i, beta_i) per module and take the argmax.

    ``np.argmax`` returns the first maximum, i.e. ties go to the lowest index.
    """
    rng = np.random.default_rng(seed)
    choice = []
    for a, b in zip(state.alpha, state.beta):
        w = rng.beta(a, b)
        choice.append(int(np.argmax(w)))
    return PipelineConfig(tuple(choice), space)


def reward(f_t: float, cfg: RewardConfig, seed) -> tuple[float, int]:
    """Continuous reward clipped to [0, 1] and a Bernoulli draw from it."""
    r_tilde = max(0.0, (f_t - cfg.f_low) / (cfg.f_upp - cfg.f_low))
    r_tilde = min(1.0, r_tilde)
    rng = np.random.default_rng(seed)
    r = int(rng.random() < r_tilde)
    return r_tilde, r


def update(state: BetaState, config: PipelineConfig, r: int) -> BetaState:
    if r not in (0, 1):
        raise ValueError(f"binary reward expected, got {r}")
    new = state.copy()
    for i, c in enumerate(config.choice):
        new.alpha[i][c] += r
        new.beta[i][c] += 1 - r
    return new
