"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .augment import KINDS, AugmentParams, augment_dataset
from .data import (DataError, irregular_sample_dataset, load, make_synthetic_sine, save_multivariate,
                   save_ucr, znormalize)
from .metrics import auc, write_scores_csv
from .search import RunConfig, run_search, write_outputs
from .train import TrainConfig, TrainedModel, score_many

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _beta(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"beta must lie in [0, 1), got {v}")
    return v


def _unit(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"value must lie in [0, 1], got {v}")
    return v


def _positive(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _data_args(p, required=True):
    p.add_argument("--dataset", required=required, help="UCR TSV file or multivariate JSON file")
    p.add_argument("--format", choices=("ucr", "mvjson"), default="ucr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsautoml", description="Automated pipeline search for time-series "
                     "anomaly detection and clustering.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("search", help="run the full pipeline search")
    _data_args(p)
    p.add_argument("--task", choices=("anomaly", "cluster"), default="anomaly")
    p.add_argument("--beta", type=_beta, default=0.0, help="fraction of timestamps to drop")
    p.add_argument("--contamination", type=_unit, default=0.0)
    p.add_argument("--iterations", type=_positive, default=40, help="Thompson-sampling iterations")
    p.add_argument("--bo-iters", type=_positive, default=25, help="BO steps per iteration")
    p.add_argument("--epochs", type=_positive, default=20, help="training epochs during search")
    p.add_argument("--final-epochs", type=_positive, default=50)
    p.add_argument("--normal-class", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("evaluate", help="score a saved model on a dataset")
    _data_args(p)
    p.add_argument("--model", required=True, help="model.json from a search run")
    p.add_argument("--task", choices=("anomaly", "cluster"), default="anomaly")
    p.add_argument("--beta", type=_beta, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="scores.csv", help="CSV score file")

    p = sub.add_parser("sample", help="drop timestamps at random and write the result")
    _data_args(p)
    p.add_argument("--beta", type=_beta, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSON file (keeps original timestamps)")

    p = sub.add_parser("augment", help="write augmented copies of a dataset")
    _data_args(p)
    p.add_argument("--kind", choices=KINDS, default="scaling")
    p.add_argument("--n-aug", type=int, default=10)
    p.add_argument("--h-amp", type=float, default=1.2)
    p.add_argument("--h-shift", type=int, default=3)
    p.add_argument("--h-tm-frac", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSON file")

    p = sub.add_parser("synth", help="write the synthetic sine benchmark")
    p.add_argument("--format", choices=("ucr", "mvjson"), default="ucr")
    p.add_argument("--n-normal", type=_positive, default=300)
    p.add_argument("--n-anomalous", type=int, default=100)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _progress(entry):
    print(json.dumps({"iteration": entry["iteration"], "f": entry["f"], "r": entry["r"],
                      "pipeline": entry["pipeline"]}), file=sys.stderr)


def cmd_search(a) -> int:
    cfg = RunConfig(dataset=a.dataset, fmt=a.format, task=a.task, beta=a.beta,
                    contamination=a.contamination, iterations=a.iterations, bo_iters=a.bo_iters,
                    seed=a.seed, train=TrainConfig(epochs=a.epochs), final_epochs=a.final_epochs,
                    normal_class=a.normal_class, out=a.out)
    result = run_search(cfg, progress=_progress if a.verbose else None)
    paths = write_outputs(result, a.out, figures=not a.no_figures)
    summary = {"best": result.report["best"], "test": result.report["test"], "outputs": paths}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK if result.report["test"] is not None else EXIT_RUNTIME


def cmd_evaluate(a) -> int:
    model = TrainedModel.load(a.model)
    ds = znormalize(load(a.dataset, a.format))
    if a.beta > 0:
        ds = irregular_sample_dataset(ds, a.beta, a.seed)
    out = {"n": len(ds)}
    if a.task == "anomaly":
        scores = score_many(model, ds)
        labels = None
        if all(s.label is not None for s in ds) and model.normal_class is not None:
            labels = [int(s.label != model.normal_class) for s in ds]
            if len(set(labels)) == 2:
                out["auc"] = auc(scores, np.array(labels))
    else:
        from .metrics import assign_clusters, nmi
        truth = [s.label for s in ds]
        k = len(set(truth)) if None not in truth else 2
        scores = assign_clusters(model, ds, max(k, 2), a.seed).astype(float)
        labels = truth if None not in truth else None
        if labels is not None:
            out["nmi"] = nmi(scores.astype(int), labels)
    write_scores_csv(a.out, ds.ids, scores, labels)
    out["scores"] = a.out
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_sample(a) -> int:
    ds = load(a.dataset, a.format)
    save_multivariate(irregular_sample_dataset(ds, a.beta, a.seed), a.out)
    return EXIT_OK


def cmd_augment(a) -> int:
    ds = load(a.dataset, a.format)
    try:
        params = AugmentParams(a.kind, a.n_aug, a.h_amp, a.h_shift, a.h_tm_frac, a.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    aug = augment_dataset(ds, params)
    extra = replace(aug, series=aug.series[len(ds):])
    save_multivariate(extra, a.out)
    return EXIT_OK


def cmd_synth(a) -> int:
    if a.n_anomalous < 0 or a.length < 8:
        raise UsageError("need --n-anomalous >= 0 and --length >= 8")
    ds = make_synthetic_sine(a.n_normal, a.n_anomalous, a.length, seed=a.seed)
    (save_ucr if a.format == "ucr" else save_multivariate)(ds, a.out)
    return EXIT_OK


COMMANDS = {"search": cmd_search, "evaluate": cmd_evaluate, "sample": cmd_sample,
            "augment": cmd_augment, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except UsageError as exc:
        print(f"tsautoml {a.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError, ArithmeticError, RuntimeError, KeyError) as exc:
        print(f"tsautoml {a.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
