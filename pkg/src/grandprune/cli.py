"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
import sys

import numpy as np
import yaml

from . import experiment, toy
from .analysis import extremes_report, format_report, seed_correlation_study, write_report_tsv
from .dataset import NoiseRecord, inject_label_noise, load_jsonl, write_jsonl
from .errors import DataError, GrandPruneError, UsageError
from .experiment import ExperimentConfig, make_featurizer
from .model import TrainConfig, evaluate, load_snapshot, save_snapshot, train
from .pruning import materialize, random_select, select_window
from .scoring import ScoreTable, aggregate_seeds, export_probabilities, ingest_probability_dump, normalize_metric, score_dataset

log = logging.getLogger("grandprune")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _settings(args) -> dict:
    """Raw YAML mapping from --config, or an empty dict."""
    if not getattr(args, "config", None):
        return {}
    try:
        obj = yaml.safe_load(Path(args.config).read_text()) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError(f"{args.config}: config must be a mapping")
    return obj


def _out(args, default=".") -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(path, settings):
    d = load_jsonl(path, settings.get("label_names"))
    if not d.has_dense_ids():
        raise DataError(f"{path}: ids must be 0..N-1 in file order for training and scoring")
    return d


def cmd_train(args):
    settings = _settings(args)
    d = _load_data(args.data, settings)
    fz = make_featurizer(settings.get("features", {}))
    opts = {"learning_rate": 0.5, "batch_size": 32, "epochs": 1, "momentum": 0.9, "hidden_dim": 0}
    opts.update(settings.get("train", {}))
    for key in ("epochs", "learning_rate", "batch_size"):
        if getattr(args, key) is not None:
            opts[key] = getattr(args, key)
    probe = TrainConfig(**opts)
    steps = args.steps if args.steps is not None else [probe.steps_per_epoch(len(d)) * (e + 1) for e in range(probe.epochs)]
    seeds = args.seeds if args.seeds is not None else [args.seed]
    X = fz.transform(d)
    out = _out(args)
    for seed in seeds:
        res = train(d, fz, TrainConfig(seed=seed, checkpoint_steps=tuple(steps), **opts), X=X)
        for snap in res.snapshots:
            path = out / f"snapshot_seed{seed}_step{snap.step}.bin"
            save_snapshot(snap, path)
            print(path)
    return 0


def cmd_score(args):
    settings = _settings(args)
    d = _load_data(args.data, settings)
    fz = make_featurizer(settings.get("features", {}))
    metric = normalize_metric(args.metric)
    X = fz.transform(d)
    per_seed, steps = {}, set()
    for path in args.snapshots:
        snap = load_snapshot(path)
        if snap.seed in per_seed:
            raise UsageError(f"two snapshots for seed {snap.seed}")
        per_seed[snap.seed] = score_dataset(snap, d, fz, metric, X=X)
        steps.add(snap.step)
    if len(steps) != 1:
        raise UsageError(f"snapshots come from different steps: {sorted(steps)}")
    table = aggregate_seeds(per_seed, steps.pop(), metric)
    path = _out(args) / f"{metric}_step{table.step}.tsv"
    table.save(path)
    if args.dump_probs:
        export_probabilities([load_snapshot(p) for p in args.snapshots], d, fz, _out(args) / "probabilities.tsv", X=X)
    print(path)
    return 0


def cmd_prune(args):
    out = _out(args)
    if args.random:
        if not args.data:
            raise UsageError("--random needs --data")
        d = load_jsonl(args.data)
        sel = random_select(d, args.keep, args.seed)
    else:
        if not args.scores:
            raise UsageError("prune needs --scores (or --random with --data)")
        table = ScoreTable.load(args.scores)
        sel = select_window(table.mean, args.delete, args.keep)
        d = load_jsonl(args.data) if args.data else None
    path = out / "selection.json"
    sel.save(path)
    print(f"{path}\t{len(sel)} ids")
    if d is not None:
        write_jsonl(materialize(d, sel), out / "selected.jsonl")
    return 0


def cmd_eval(args):
    settings = _settings(args)
    d = load_jsonl(args.data, settings.get("label_names"))
    fz = make_featurizer(settings.get("features", {}))
    snap = load_snapshot(args.snapshot)
    print(f"{evaluate(snap.params, d, fz):.6f}")
    return 0


def _sweep_config(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError("sweeps need --config")
    obj = _settings(args)
    if args.out:
        obj["out_dir"] = args.out
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.no_plots:
        obj["plots"] = False
    return ExperimentConfig.from_dict(obj)


def _print_rows(rows):
    cols = experiment.SWEEP_COLUMNS
    print("\t".join(cols))
    for r in rows:
        print("\t".join(experiment._fmt(r[c]) for c in cols))


def cmd_sweep(fn):
    def run(args):
        result = fn(_sweep_config(args), threads=args.threads)
        _print_rows(result["rows"])
        return 0

    return run


def cmd_correlate(args):
    if args.scores:
        table = ScoreTable.load(args.scores)
        report = seed_correlation_study(table.seed_scores)
        payload = report.to_json()
        if args.out:
            report.save(_out(args) / "correlation.json")
    else:
        payload = experiment.run_correlation(_sweep_config(args), threads=args.threads)["payload"]
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_report_extremes(args):
    settings = _settings(args)
    d = _load_data(args.data, settings)
    fz = make_featurizer(settings.get("features", {}))
    table = ScoreTable.load(args.scores)
    rows = extremes_report(table, d, load_snapshot(args.snapshot), fz, args.count)
    out = _out(args)
    write_report_tsv(rows, out / "extremes.tsv")
    text = format_report(rows)
    (out / "extremes.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_ingest_dump(args):
    settings = _settings(args)
    d = _load_data(args.data, settings)
    out = _out(args)
    for table in ingest_probability_dump(args.dump, d):
        path = out / f"{table.metric}_step{table.step}.tsv"
        table.save(path)
        print(path)
    return 0


def cmd_inject_noise(args):
    d = load_jsonl(args.data)
    noisy, record = inject_label_noise(d, args.rate, args.seed)
    out = _out(args)
    write_jsonl(noisy, out / "noisy.jsonl", label_strings=True)
    record.save(out / "noise.json")
    print(f"flipped {len(record.flipped_ids)} of {len(d)} labels")
    return 0


def cmd_make_toy(args):
    train_set, eval_set, record = toy.make_task(args.seed, args.n_train, args.n_eval, args.noise_rate)
    out = _out(args)
    write_jsonl(train_set, out / "train.jsonl", label_strings=True)
    write_jsonl(eval_set, out / "eval.jsonl", label_strings=True)
    record.save(out / "noise.json")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (features/train sections, or a full sweep config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1, help="parallel cells or seeds; output does not depend on it")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="grandprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train seeded runs and save snapshots")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--steps", type=_ints, help="checkpoint steps (default: end of every epoch)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common], help="score a dataset with one snapshot per seed")
    p.add_argument("--data", required=True)
    p.add_argument("--snapshots", nargs="+", required=True)
    p.add_argument("--metric", default="EL2N")
    p.add_argument("--dump-probs", action="store_true", help="also write a probability dump")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("prune", parents=[common], help="select a subset from a score table")
    p.add_argument("--scores")
    p.add_argument("--data")
    p.add_argument("--keep", type=float, default=0.7)
    p.add_argument("--delete", type=float, default=0.0)
    p.add_argument("--random", action="store_true")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", parents=[common], help="accuracy of a snapshot on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--snapshot", required=True)
    p.set_defaults(func=cmd_eval)

    for name, fn in (
        ("sweep-steps", experiment.run_step_sweep),
        ("sweep-fractions", experiment.run_fraction_sweep),
        ("sweep-delete", experiment.run_delete_sweep),
    ):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--no-plots", action="store_true")
        p.set_defaults(func=cmd_sweep(fn))

    p = sub.add_parser("correlate", parents=[common], help="seed-vs-mean Spearman study")
    p.add_argument("--scores", help="score TSV with per-seed columns (skips training)")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("report-extremes", parents=[common], help="highest and lowest scoring examples")
    p.add_argument("--data", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--count", type=int, default=5)
    p.set_defaults(func=cmd_report_extremes)

    p = sub.add_parser("ingest-dump", parents=[common], help="score tables from an external probability dump")
    p.add_argument("--data", required=True)
    p.add_argument("--dump", required=True)
    p.set_defaults(func=cmd_ingest_dump)

    p = sub.add_parser("inject-noise", parents=[common], help="flip a fraction of labels")
    p.add_argument("--data", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser("make-toy", parents=[common], help="write the synthetic two-class corpus")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-eval", type=int, default=1000)
    p.add_argument("--noise-rate", type=float, default=0.1)
    p.set_defaults(func=cmd_make_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is None and args.command in ("train", "prune", "inject-noise", "make-toy"):
        args.seed = 0
    try:
        return args.func(args)
    except GrandPruneError as exc:
        print(f"grandprune: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"grandprune: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
