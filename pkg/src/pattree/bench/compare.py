"""Benchmark harness: the four-way model comparison and the attribute-label sweep."""

import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from .. import trainer
from ..data import config_dict, generate
from . import baselines
from .metrics import evaluate_proba, evaluate_tree

log = logging.getLogger(__name__)

MODELS = ("flat", "attribute_specific", "hard_at", "pat")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
DEFAULT_FRACTIONS = (0.0, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0)


@dataclass
class BenchConfig:
    seeds: tuple = DEFAULT_SEEDS
    fractions: tuple = DEFAULT_FRACTIONS
    small_n_train: int = 600


def train_pat(train, config):
    return trainer.run_training(train, config)


def _tree_report(state, test, config, name):
    return evaluate_tree(
        state.tree,
        state.classifiers,
        test,
        routing=config.routing,
        name=name,
        seed=config.seed,
        history=state.history,
        config=config_dict(config),
    )


def run_comparison(train, test, config, small_train=None):
    """Train and evaluate the four models on one seed.

    ``config`` is the tree model's configuration; the flat models take its
    seed, budget and rates with a hidden width matched to the tree's
    parameter count.  The attribute-specific models train on ``small_train``
    when given (and a flat model on the same data is recorded alongside for
    reference).  Returns ``{model name: MetricsReport}``.
    """
    config.validate()
    d_in = train.width
    hidden = baselines.matched_hidden_width(config, d_in)
    flat_cfg = replace(config, schema=(), widths=(d_in, hidden))
    flat_echo = dict(config_dict(flat_cfg), hidden=hidden)
    out = {}

    state = train_pat(train, config)
    out["pat"] = _tree_report(state, test, config, "pat")

    hard_cfg = baselines.hard_config(config)
    out["hard_at"] = _tree_report(trainer.run_training(train, hard_cfg), test, hard_cfg, "hard_at")

    flat = baselines.train_flat(train, hidden, flat_cfg)
    out["flat"] = evaluate_proba(
        flat.predict_proba(test.features), test, "flat", config.seed, flat.history, flat_echo
    )
    out["flat"].extra["param_ratio"] = baselines.param_match_ratio(config, hidden, d_in)

    subset_train = train if small_train is None else small_train
    subset_models = baselines.train_attribute_specific(subset_train, hidden, flat_cfg)
    rep = evaluate_proba(
        subset_models.predict_proba(test.features, test.attributes),
        test,
        "attribute_specific",
        config.seed,
        config=flat_echo,
    )
    rep.extra["n_train"] = len(subset_train)
    if small_train is not None:
        ref = baselines.train_flat(small_train, hidden, flat_cfg)
        pred = ref.predict_proba(test.features)
        rep.extra["flat_accuracy_same_data"] = evaluate_proba(pred, test, "flat").accuracy
    out["attribute_specific"] = rep
    return out


def seed_data(synth, seed, small_n_train=None):
    """Train/test split for ``seed``, plus the first ``small_n_train`` training samples."""
    train, test = generate(replace(synth, seed=seed))
    small = None
    if small_n_train is not None:
        small = train.subset(np.arange(min(small_n_train, len(train))))
    return train, test, small


def run_benchmark(synth, config, bench=None):
    """Four-way comparison over every seed.

    Returns ``{"reports": {seed: {model: report}}, "means": {model: mean accuracy}}``.
    """
    bench = bench or BenchConfig()
    reports = {}
    for seed in bench.seeds:
        train, test, small = seed_data(synth, seed, bench.small_n_train)
        reports[seed] = run_comparison(train, test, replace(config, seed=seed), small)
        log.info("seed %d: %s", seed, {m: r.accuracy for m, r in reports[seed].items()})
    means = {m: float(np.mean([reports[s][m].accuracy for s in bench.seeds])) for m in MODELS}
    flat_small = [reports[s]["attribute_specific"].extra.get("flat_accuracy_same_data") for s in bench.seeds]
    if all(v is not None for v in flat_small):
        means["flat_small"] = float(np.mean(flat_small))
    return {"reports": reports, "means": means}


@dataclass
class SweepRow:
    fraction: float
    mean: float
    std: float
    accuracies: tuple


def label_fraction_sweep(
    synth, config, fractions=DEFAULT_FRACTIONS, seeds=DEFAULT_SEEDS, cache=None, reports=None
):
    """Accuracy of the tree model as attribute labels are thinned to each fraction.

    ``cache`` maps ``(seed, fraction)`` to an already measured accuracy (for
    example the full-label run of :func:`run_benchmark`) and is filled in.
    ``reports``, when given, collects the full report of every run trained here.
    """
    cache = {} if cache is None else cache
    rows = []
    data = {}
    for f in fractions:
        accs = []
        for seed in seeds:
            key = (seed, float(f))
            if key not in cache:
                if seed not in data:
                    data[seed] = seed_data(synth, seed)[:2]
                train, test = data[seed]
                cfg = replace(config, seed=seed, attribute_label_fraction=float(f))
                rep = _tree_report(train_pat(train, cfg), test, cfg, "pat")
                if reports is not None:
                    reports[key] = rep
                cache[key] = rep.accuracy
            accs.append(cache[key])
        rows.append(SweepRow(float(f), float(np.mean(accs)), float(np.std(accs)), tuple(accs)))
    return rows


def seed_cache(benchmark, fraction=1.0):
    """Sweep cache entries taken from the PAT rows of a benchmark result."""
    return {(s, float(fraction)): r["pat"].accuracy for s, r in benchmark["reports"].items()}


def comparison_tsv(benchmark):
    lines = ["seed\tmodel\taccuracy"]
    for seed, reps in benchmark["reports"].items():
        for m in MODELS:
            lines.append(f"{seed}\t{m}\t{reps[m].accuracy!r}")
    for m, v in benchmark["means"].items():
        lines.append(f"mean\t{m}\t{v!r}")
    return "\n".join(lines) + "\n"


def sweep_tsv(rows):
    lines = ["fraction\tmean_accuracy\tstd\tn_seeds"]
    lines += [f"{r.fraction!r}\t{r.mean!r}\t{r.std!r}\t{len(r.accuracies)}" for r in rows]
    return "\n".join(lines) + "\n"


def write_comparison(out_dir, benchmark):
    """One JSON report per model plus ``summary.tsv``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for m in MODELS:
        per_seed = [reps[m].to_dict() for reps in benchmark["reports"].values()]
        path = os.path.join(out_dir, f"report_{m}.json")
        with open(path, "w") as fh:
            json.dump(
                {"model": m, "mean_accuracy": benchmark["means"][m], "runs": per_seed},
                fh,
                indent=1,
                sort_keys=True,
            )
            fh.write("\n")
        paths.append(path)
    path = os.path.join(out_dir, "summary.tsv")
    with open(path, "w") as fh:
        fh.write(comparison_tsv(benchmark))
    paths.append(path)
    return paths


def write_sweep(out_dir, rows):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "sweep.tsv")
    with open(path, "w") as fh:
        fh.write(sweep_tsv(rows))
    return path
