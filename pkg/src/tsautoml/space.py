"""Pipeline search space: module slots, their options, and the
hyperparameter domains each option activates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentParams
from .nets import NetConfig, dec_bounds


@dataclass(frozen=True)
class Domain:
    name: str
    lo: float
    hi: float
    integer: bool = False

    def decode(self, p: float):
        """Map a unit-cube coordinate to the domain (integers rounded)."""
        v = self.lo + float(np.clip(p, 0.0, 1.0)) * (self.hi - self.lo)
        if self.integer:
            return int(min(self.hi, max(self.lo, round(v))))
        return float(min(self.hi, max(self.lo, v)))

    def encode(self, v) -> float:
        if self.hi == self.lo:
            return 0.0
        return (float(v) - self.lo) / (self.hi - self.lo)

    def contains(self, v) -> bool:
        if self.integer and int(v) != v:
            return False
        return self.lo <= v <= self.hi


@dataclass(frozen=True)
class Module:
    name: str
    options: tuple
    # option name -> tuple of Domain
    domains: dict = field(default_factory=dict)

    @property
    def Q(self) -> int:
        return len(self.options)


def _naug():
    return Domain("n_aug", 0, 100, True)


def default_space(channel_dim: int = 1, H_range=(2, 6)) -> "SearchSpace":
    dlo, dhi = dec_bounds(channel_dim)
    enc = (Domain("h_enc", 1, 32, True),)
    dec = (Domain("h_dec", dlo, dhi, True),)
    modules = (
        Module("augmentation", ("scaling", "shifting", "timewarp"), {
            "scaling": (_naug(), Domain("h_amp", 0.5, 1.8)),
            "shifting": (_naug(), Domain("h_shift", -10, 10, True)),
            "timewarp": (_naug(), Domain("h_tm_frac", 0.1, 0.25)),
        }),
        Module("encoder", ("rnn", "lstm", "gru"), {k: enc for k in ("rnn", "lstm", "gru")}),
        Module("attention", ("none", "self")),
        Module("decoder", ("rnn", "lstm", "gru"), {k: dec for k in ("rnn", "lstm", "gru")}),
        Module("em_estimator", ("gmm",), {"gmm": (Domain("H", H_range[0], H_range[1], True),)}),
        Module("similarity", ("rel_euclid", "cosine", "both")),
        Module("estimation_network", ("mlp",), {
            "mlp": (Domain("est_layers", 1, 5, True), Domain("est_nodes", 8, 128, True))}),
        Module("classification_network", ("mlp",), {
            "mlp": (Domain("clas_layers", 1, 5, True), Domain("clas_nodes", 8, 128, True))}),
    )
    return SearchSpace(modules, channel_dim)


@dataclass(frozen=True)
class PipelineConfig:
    """One option index per module slot (the one-hot choice)."""

    choice: tuple
    space: "SearchSpace" = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(int(c) for c in self.choice))
        if self.space is not None:
            if len(self.choice) != len(self.space.modules):
                raise ValueError("one choice per module required")
            for c, m in zip(self.choice, self.space.modules):
                if not 0 <= c < m.Q:
                    raise ValueError(f"option {c} invalid for module {m.name}")

    def one_hot(self) -> list:
        return [[1 if j == c else 0 for j in range(m.Q)]
                for c, m in zip(self.choice, self.space.modules)]

    def option(self, module: str) -> str:
        for c, m in zip(self.choice, self.space.modules):
            if m.name == module:
                return m.options[c]
        raise KeyError(module)

    def names(self) -> dict:
        return {m.name: m.options[c] for c, m in zip(self.choice, self.space.modules)}

    @property
    def key(self) -> str:
        return "-".join(str(c) for c in self.choice)


@dataclass(frozen=True)
class HyperparamVector:
    values: dict
    domains: tuple = field(compare=False, repr=False, default=())

    def __post_init__(self):
        for d in self.domains:
            if d.name not in self.values:
                raise ValueError(f"missing hyperparameter {d.name}")
            if not d.contains(self.values[d.name]):
                raise ValueError(f"{d.name}={self.values[d.name]} outside [{d.lo}, {d.hi}]")

    def __getitem__(self, k):
        return self.values[k]

    def get(self, k, default=None):
        return self.values.get(k, default)

    @classmethod
    def from_unit(cls, p, domains) -> "HyperparamVector":
        return cls({d.name: d.decode(x) for d, x in zip(domains, p)}, tuple(domains))

    def to_unit(self) -> np.ndarray:
        return np.array([d.encode(self.values[d.name]) for d in self.domains])


@dataclass(frozen=True)
class SearchSpace:
    modules: tuple
    channel_dim: int = 1

    @property
    def M(self) -> int:
        return len(self.modules)

    @property
    def sizes(self) -> list:
        return [m.Q for m in self.modules]

    def pipeline(self, choice) -> PipelineConfig:
        return PipelineConfig(tuple(choice), self)

    def pipeline_from_names(self, **names) -> PipelineConfig:
        choice = []
        for m in self.modules:
            opt = names.get(m.name, m.options[0])
            choice.append(m.options.index(opt))
        return PipelineConfig(tuple(choice), self)

    def active_domains(self, pipeline: PipelineConfig) -> tuple:
        out = []
        for c, m in zip(pipeline.choice, self.modules):
            out.extend(m.domains.get(m.options[c], ()))
        return tuple(out)

    def default_hyperparams(self, pipeline: PipelineConfig, **overrides) -> HyperparamVector:
        base = {"n_aug": 0, "h_amp": 1.0, "h_shift": 0, "h_tm_frac": 0.1, "h_enc": 8,
                "h_dec": max(8, dec_bounds(self.channel_dim)[0]) if self.channel_dim == 1
                else dec_bounds(self.channel_dim)[0],
                "H": 2, "est_layers": 1, "est_nodes": 16, "clas_layers": 1, "clas_nodes": 16}
        base.update(overrides)
        doms = self.active_domains(pipeline)
        return HyperparamVector({d.name: base[d.name] for d in doms}, doms)


def build_configs(pipeline: PipelineConfig, hp: HyperparamVector, channel_dim: int,
                  seed: int = 0) -> tuple[NetConfig, AugmentParams]:
    names = pipeline.names()
    net = NetConfig(
        encoder_kind=names["encoder"], decoder_kind=names["decoder"],
        attention=names["attention"], h_enc=int(hp["h_enc"]), h_dec=int(hp["h_dec"]),
        sim_kind=names["similarity"], est_layers=int(hp["est_layers"]),
        est_nodes=int(hp["est_nodes"]), clas_layers=int(hp["clas_layers"]),
        clas_nodes=int(hp["clas_nodes"]), H=int(hp["H"]), channel_dim=channel_dim)
    aug = AugmentParams(
        kind=names["augmentation"], n_aug=int(hp.get("n_aug", 0)),
        h_amp=float(hp.get("h_amp", 1.0)), h_shift=int(hp.get("h_shift", 0)),
        h_tm_frac=float(hp.get("h_tm_frac", 0.1)), seed=seed)
    return net, aug
