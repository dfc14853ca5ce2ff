"""Command-line entry point: ``pattree {synth,train,eval,gradcheck,compare,sweep}``.

Every command can be driven from a JSON run-configuration file with the
sections ``synth``, ``train``, ``bench`` and ``output``; flags override single
keys.  Exit codes: 0 success, 2 configuration or input error, 3 numerical
failure, 4 verification failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace

from . import data, trainer
from .bench import compare, gradcheck, plotting
from .bench.metrics import evaluate_tree
from .errors import NonFiniteLoss, PatError

log = logging.getLogger("pattree")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

OUTPUT_KEYS = ("dir", "train", "test", "model", "log", "report")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    synth: data.SynthConfig = field(default_factory=data.SynthConfig)
    train: trainer.TrainConfig = field(default_factory=trainer.TrainConfig)
    bench: compare.BenchConfig = field(default_factory=compare.BenchConfig)
    output: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "synth": data.config_dict(self.synth),
            "train": data.config_dict(self.train),
            "bench": data.config_dict(self.bench),
            "output": dict(self.output),
        }


_TUPLE_KEYS = {"schema", "widths", "seeds", "fractions"}


def _section(cls, values, name):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    kw = {}
    for k, v in values.items():
        if k in _TUPLE_KEYS and isinstance(v, list):
            v = tuple(tuple(p) if isinstance(p, list) else p for p in v)
        kw[k] = v
    return cls(**kw)


def parse_run_config(doc):
    """Build a :class:`RunConfig` from a decoded JSON object, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("run configuration must be a JSON object")
    unknown = sorted(set(doc) - {"synth", "train", "bench", "output"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    synth = _section(data.SynthConfig, doc.get("synth", {}), "synth")
    train_doc = dict(doc.get("train", {}))
    # the model follows the data's schema, class count and width unless told otherwise
    train_doc.setdefault("schema", [list(p) for p in synth.schema])
    train_doc.setdefault("n_classes", synth.n_classes)
    train = _section(trainer.TrainConfig, train_doc, "train")
    if "widths" not in doc.get("train", {}):
        train = replace(train, widths=(synth.width,) + tuple(train.widths[1:]))
    bench = _section(compare.BenchConfig, doc.get("bench", {}), "bench")
    output = doc.get("output", {})
    if not isinstance(output, dict):
        raise ConfigError("section 'output' must be an object")
    bad = sorted(set(output) - set(OUTPUT_KEYS))
    if bad:
        raise ConfigError(f"unknown key(s) in 'output': {', '.join(bad)}")
    return RunConfig(synth, train, bench, dict(output))


def load_run_config(path, overrides=()):
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if not isinstance(doc.setdefault(section, {}), dict):
            raise ConfigError(f"section {section!r} must be an object")
        doc[section][name] = value
    cfg = parse_run_config(doc)
    try:
        cfg.synth.validate()
        cfg.train.validate()
    except PatError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _out(cfg, key, flag, default):
    value = flag if flag is not None else cfg.output.get(key, default)
    if value is None:
        raise ConfigError(f"no output path for {key!r}")
    base = cfg.output.get("dir")
    if base and not os.path.isabs(value):
        value = os.path.join(base, value)
    parent = os.path.dirname(value)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return value


def _schema(cfg):
    return data.AttributeSchema.from_list(cfg.train.schema)


# -- commands ----------------------------------------------------------------


def cmd_synth(args, cfg):
    train, test = data.generate(cfg.synth)
    out_train = _out(cfg, "train", args.out_train, "train.csv")
    out_test = _out(cfg, "test", args.out_test, "test.csv")
    data.write_dataset(out_train, train)
    data.write_dataset(out_test, test)
    print(f"wrote {len(train)} training samples to {out_train} and {len(test)} test samples to {out_test}")
    return EXIT_OK


def cmd_train(args, cfg):
    schema = _schema(cfg)
    train = data.read_dataset(args.data, schema)
    aux = data.read_dataset(args.aux_data, schema) if args.aux_data else None
    if train.width != cfg.train.widths[0]:
        raise ConfigError(f"data width {train.width} != input width {cfg.train.widths[0]}")
    out_model = _out(cfg, "model", args.out_model, "model.json")
    out_log = _out(cfg, "log", args.log, "train_log.tsv")
    print(trainer.format_log_header(cfg.train))
    state = trainer.run_training(train, cfg.train, aux=aux)
    data.save_model(out_model, state.tree, state.classifiers, data.config_dict(cfg.train))
    trainer.write_log(out_log, state, cfg.train)
    if args.plot:
        plotting.plot_loss_curves(state.history, args.plot)
    it, total, l_ms, l_pat = state.history[-1]
    print(f"iteration {it}: L={total:.6f} L_MS={l_ms:.6f} L_PAT={l_pat:.6f}")
    return EXIT_OK


def cmd_eval(args, cfg):
    tree, cls, model_cfg = data.load_model(args.model)
    dataset = data.read_dataset(args.data, tree.schema)
    report = evaluate_tree(
        tree,
        cls,
        dataset,
        routing=model_cfg.get("routing", "soft"),
        name="pat",
        seed=model_cfg.get("seed", 0),
        config=model_cfg,
    )
    path = _out(cfg, "report", args.report, "report.json")
    report.save(path)
    print(f"accuracy {report.accuracy:.4f} on {report.n_samples} samples")
    for node, p in sorted(report.purity.items()):
        print(f"purity node {node}: {p:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    res = gradcheck.gradcheck(args.seed, h=args.h)
    print(
        f"seed {res.seed}: {res.n_coordinates} coordinates, max relative error {res.max_rel_error:.3e}"
    )
    if not res.passed(args.tolerance):
        print(
            f"worst coordinate {res.worst_parameter}{list(res.worst_index)}: "
            f"analytic {res.analytic!r} numeric {res.numeric!r}",
            file=sys.stderr,
        )
        return EXIT_VERIFY
    return EXIT_OK


def cmd_compare(args, cfg):
    bench = cfg.bench
    if args.seeds:
        bench = replace(bench, seeds=tuple(args.seeds))
    result = compare.run_benchmark(cfg.synth, cfg.train, bench)
    out_dir = _out(cfg, "dir", args.out_dir, "compare")
    paths = compare.write_comparison(out_dir, result)
    plotting.plot_comparison(result, os.path.join(out_dir, "comparison.png"))
    for seed, reps in result["reports"].items():
        plotting.plot_loss_curves(
            reps["pat"].loss_curve, os.path.join(out_dir, f"loss_pat_seed{seed}.png")
        )
    sys.stdout.write(compare.comparison_tsv(result))
    log.info("wrote %s", ", ".join(paths))
    return EXIT_OK


def cmd_sweep(args, cfg):
    fractions = cfg.bench.fractions if args.fractions is None else args.fractions
    seeds = tuple(args.seeds) if args.seeds else cfg.bench.seeds
    rows = compare.label_fraction_sweep(cfg.synth, cfg.train, fractions, seeds)
    out_dir = _out(cfg, "dir", args.out_dir, "sweep")
    compare.write_sweep(out_dir, rows)
    plotting.plot_sweep(rows, os.path.join(out_dir, "sweep.png"))
    sys.stdout.write(compare.sweep_tsv(rows))
    return EXIT_OK


def _fractions(text):
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None
    if not values or any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("fractions must lie in [0, 1]")
    return values


def build_parser():
    p = argparse.ArgumentParser(prog="pattree", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config=True):
        sp = sub.add_parser(name, help=help_text)
        if config:
            sp.add_argument("--config", help="JSON run configuration")
            sp.add_argument(
                "--set",
                action="append",
                default=[],
                metavar="SECTION.KEY=VALUE",
                help="override one configuration key (value parsed as JSON)",
            )
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "generate synthetic train/test datasets")
    sp.add_argument("--out-train")
    sp.add_argument("--out-test")

    sp = add("train", cmd_train, "train a tree model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--aux-data", help="attribute-labeled second source; half of every batch")
    sp.add_argument("--out-model")
    sp.add_argument("--log")
    sp.add_argument("--plot", help="write a loss-curve figure here")

    sp = add("eval", cmd_eval, "evaluate a saved model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--report")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference gradient check", config=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--h", type=float, default=1e-5)

    sp = add("compare", cmd_compare, "flat / attribute-specific / hard / soft comparison")
    sp.add_argument("--out-dir")
    sp.add_argument("--seeds", type=int, nargs="+")

    sp = add("sweep", cmd_sweep, "accuracy against the fraction of attribute labels")
    sp.add_argument("--fractions", type=_fractions, help="comma-separated, e.g. 0,0.5,1")
    sp.add_argument("--out-dir")
    sp.add_argument("--seeds", type=int, nargs="+")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_run_config(getattr(args, "config", None), getattr(args, "set", ()))
        return args.func(args, cfg)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.dump, default=str), file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, PatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
