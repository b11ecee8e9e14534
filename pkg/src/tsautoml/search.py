"""End-to-end pipeline search: Thompson sampling over module options,
Bayesian optimization of each sampled pipeline's hyperparameters, and a
single held-out evaluation of the retrained winner."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import gmm
from .bandit import BetaState, RewardConfig, reward, sample_config, update
from .bo import BayesOpt
from .data import (Dataset, DataError, SplitDataset, irregular_sample_dataset, load,
                   make_synthetic_sine, split, znormalize)
from .metrics import EvalReport, MetricError, assign_latents, auc, nmi
from .space import HyperparamVector, PipelineConfig, SearchSpace, default_space
from .train import (TrainConfig, TrainedModel, TrainingDiverged, latents, objective,
                    score_many, train_model)

log = logging.getLogger(__name__)

SEED_NAMES = ("data", "bandit", "bo", "train")
TRAIN_FAILURES = (TrainingDiverged, gmm.SingularityError, np.linalg.LinAlgError,
                  FloatingPointError, MetricError)


@dataclass(frozen=True)
class RunConfig:
    dataset: Optional[str] = None
    fmt: str = "ucr"
    task: str = "anomaly"
    beta: float = 0.0
    contamination: float = 0.0
    iterations: int = 40
    bo_iters: int = 25
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    final_epochs: int = 50
    ratios: tuple = (0.5, 0.2, 0.3)
    normal_class: Optional[int] = None
    normalize: bool = True
    n_candidates: int = 1000
    gp_restarts: int = 5
    out: Optional[str] = None

    def __post_init__(self):
        if self.iterations < 1 or self.bo_iters < 1:
            raise ValueError("iterations and bo_iters must be >= 1")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not 0.0 <= self.contamination <= 1.0:
            raise ValueError(f"contamination must lie in [0, 1], got {self.contamination}")
        if self.task not in ("anomaly", "cluster"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.final_epochs < 1:
            raise ValueError("final_epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        return d


def sub_seeds(seed: int) -> dict:
    state = np.random.SeedSequence(seed).generate_state(len(SEED_NAMES))
    return {n: int(s) for n, s in zip(SEED_NAMES, state)}


def _derive(base: int, *path: int) -> int:
    return int(np.random.SeedSequence([base, *path]).generate_state(1)[0])


class AuditedDataset(Dataset):
    """Dataset whose label reads are appended to an access log."""

    def attach(self, access_log: list, split_name: str):
        object.__setattr__(self, "_log", access_log)
        object.__setattr__(self, "_split", split_name)
        object.__setattr__(self, "_phase", "search")
        return self

    def set_phase(self, phase: str):
        object.__setattr__(self, "_phase", phase)

    @property
    def labels(self) -> np.ndarray:
        self._log.append({"split": self._split, "phase": self._phase, "n": len(self.series)})
        return super().labels


def _audited(ds: Dataset, access_log: list, name: str) -> AuditedDataset:
    return AuditedDataset(ds.series, ds.channel_dim, ds.name).attach(access_log, name)


def prepare_splits(dataset: Dataset, cfg: RunConfig, seed: int) -> SplitDataset:
    """Normalize, split and (optionally) thin out timestamps."""
    if cfg.normalize:
        dataset = znormalize(dataset)
    s_split, s_beta = _derive(seed, 0), _derive(seed, 1)
    sp = split(dataset, cfg.task, cfg.normal_class, cfg.contamination, cfg.ratios, s_split)
    if cfg.beta > 0:
        parts = [irregular_sample_dataset(d, cfg.beta, _derive(s_beta, i))
                 for i, d in enumerate((sp.train, sp.val, sp.test))]
        sp = SplitDataset(*parts, task=sp.task, normal_class=sp.normal_class)
    return sp


def synthetic_benchmark(seed: int = 0, contamination: float = 0.0, T: int = 64,
                        n_train: int = 200, n_val: int = 50, n_test: int = 50) -> tuple[Dataset, tuple]:
    """Sine benchmark sized so that the anomaly split yields ``n_train``
    train series (a ``contamination`` fraction of them anomalous) and
    ``n_val``/``n_test`` of each class in val/test.

    Returns the dataset and the split ratios to pass to ``split``.
    """
    n_cont = int(round(contamination * n_train))
    # contamination swaps n_cont train normals for anomalies, so only the
    # anomaly pool needs to grow
    total = n_train + n_val + n_test
    ds = make_synthetic_sine(total, n_val + n_test + n_cont, T, seed=seed)
    ratios = (n_train / total, n_val / total, n_test / total)
    return ds, ratios


def evaluate(model: TrainedModel, data: Dataset, task: str, seed: int = 0,
             split_name: str = "test") -> tuple[EvalReport, np.ndarray]:
    """Score ``data`` once and compute the task metric.

    Returns the report and the per-series scores (anomaly energies, or
    cluster assignments for the cluster task).
    """
    labels = data.labels
    if task == "anomaly":
        s = score_many(model, data)
        return EvalReport(task, "auc", auc(s, labels), split_name), s
    k = len(set(labels.tolist()))
    pred = assign_latents(latents(model, data), k, seed)
    return EvalReport(task, "nmi", nmi(pred, labels), split_name), pred.astype(float)


@dataclass
class SearchResult:
    report: dict
    model: Optional[TrainedModel]
    test_scores: Optional[np.ndarray]
    splits: SplitDataset


def run_search(cfg: RunConfig, dataset: Optional[Dataset] = None, progress=None) -> SearchResult:
    """Search pipelines and hyperparameters on val, then evaluate the winner once on test."""
    t_start = time.perf_counter()
    seeds = sub_seeds(cfg.seed)
    if dataset is None:
        if cfg.dataset is None:
            raise DataError("no dataset given")
        dataset = load(cfg.dataset, cfg.fmt)
    splits = prepare_splits(dataset, cfg, seeds["data"])
    access_log: list = []
    val = splits.val
    test = _audited(splits.test, access_log, "test")
    space = default_space(dataset.channel_dim)
    rc = RewardConfig.for_task(cfg.task)
    state = BetaState.initial(space.sizes)
    optimizers: dict[str, BayesOpt] = {}
    pipelines: dict[str, PipelineConfig] = {}
    trace, iter_seconds = [], []
    n_trained = 0
    best = None  # (f, t, b, pipeline, hp)
    t_prep = time.perf_counter()

    for t in range(cfg.iterations):
        t0 = time.perf_counter()
        K = sample_config(state, _derive(seeds["bandit"], t, 0), space)
        if K.key not in optimizers:
            optimizers[K.key] = BayesOpt(space.active_domains(K), cfg.n_candidates,
                                         restarts=cfg.gp_restarts)
            pipelines[K.key] = K
        opt = optimizers[K.key]
        steps = []
        for b in range(cfg.bo_iters):
            p, hp = opt.propose(_derive(seeds["bo"], t, b))
            tc = replace(cfg.train, seed=_derive(seeds["train"], t, b))
            status = "ok"
            try:
                model = train_model(K, hp, splits, tc)
                f = objective(model, val, cfg.task, _derive(seeds["train"], t, b, 1))
                if not math.isfinite(f):
                    raise TrainingDiverged(tc.epochs, "non-finite objective")
            except TRAIN_FAILURES as exc:
                log.warning("iteration %d step %d diverged: %s", t, b, exc)
                f, status = rc.f_low, "diverged"
            n_trained += 1
            opt.observe(p, hp, f)
            steps.append({"hyperparams": dict(hp.values), "f": float(f), "status": status})
            if best is None or f > best[0]:
                best = (float(f), t, b, K, hp)
        f_t = max(s["f"] for s in steps)
        r_tilde, r = reward(f_t, rc, _derive(seeds["bandit"], t, 1))
        state = update(state, K, r)
        trace.append({"iteration": t, "pipeline": K.names(), "choice": list(K.choice),
                      "steps": steps, "f": f_t, "r_tilde": r_tilde, "r": r})
        iter_seconds.append(time.perf_counter() - t0)
        if progress is not None:
            progress(trace[-1])

    t_search = time.perf_counter()
    f_best, t_best, b_best, K_best, hp_best = best
    # fresh seed for the final retrain; retry a few times if it diverges
    final_model, final_attempts = None, []
    for attempt in range(3):
        tc = replace(cfg.train, epochs=cfg.final_epochs, seed=_derive(seeds["train"], 10**6, attempt))
        try:
            final_model = train_model(K_best, hp_best, splits, tc)
            final_attempts.append({"seed": tc.seed, "status": "ok"})
            break
        except TRAIN_FAILURES as exc:
            final_attempts.append({"seed": tc.seed, "status": f"diverged: {exc}"})
    t_final = time.perf_counter()

    test_report, test_scores = None, None
    if final_model is not None:
        test.set_phase("final")
        test_report, test_scores = evaluate(final_model, test, cfg.task, _derive(seeds["train"], 10**6, 99))
    t_end = time.perf_counter()

    report = {
        "config": cfg.to_dict(),
        "dataset": {"name": dataset.name, "n_series": len(dataset), "channel_dim": dataset.channel_dim,
                    "n_train": len(splits.train), "n_val": len(splits.val), "n_test": len(splits.test),
                    "normal_class": splits.normal_class},
        "seeds": {"root": cfg.seed, **seeds},
        "best": {"pipeline": K_best.names(), "choice": list(K_best.choice),
                 "hyperparams": dict(hp_best.values), "f": f_best,
                 "iteration": t_best, "step": b_best},
        "trace": trace,
        "beta_state": state.to_dict(space),
        "gp_histories": {key: {"pipeline": pipelines[key].names(),
                               "dimensions": [d.name for d in o.domains],
                               "observations": [ob.to_dict() for ob in o.history]}
                         for key, o in optimizers.items()},
        "final": {"attempts": final_attempts, "epochs": cfg.final_epochs,
                  "training_log": None if final_model is None else final_model.log},
        "test": None if test_report is None else test_report.to_dict(),
        "test_label_access": access_log,
        "trained_models": {"count": n_trained, "expected": cfg.iterations * cfg.bo_iters},
        "timings": {"prepare_s": t_prep - t_start, "search_s": t_search - t_prep,
                    "final_train_s": t_final - t_search, "evaluate_s": t_end - t_final,
                    "total_s": t_end - t_start, "iteration_s": iter_seconds},
    }
    return SearchResult(report, final_model, test_scores, splits)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False)


def write_outputs(result: SearchResult, out_dir, figures: bool = True) -> dict:
    """report.json, scores.csv, model.json, train_log.jsonl and PNG figures."""
    from .metrics import write_scores_csv
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json"}
    paths["report"].write_text(dumps_report(result.report))
    if result.model is not None:
        paths["model"] = out / "model.json"
        result.model.save(paths["model"])
        paths["train_log"] = out / "train_log.jsonl"
        with open(paths["train_log"], "w") as fh:
            for entry in result.model.log:
                fh.write(json.dumps(entry) + "\n")
    if result.test_scores is not None:
        paths["scores"] = out / "scores.csv"
        test = result.splits.test
        # labels come from the series themselves; the metric was already computed once
        write_scores_csv(paths["scores"], test.ids, result.test_scores, [s.label for s in test])
    if figures:
        from .plotting import save_figures
        paths.update(save_figures(result, out))
    return {k: str(v) for k, v in paths.items()}
