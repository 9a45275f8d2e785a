"""Multi-seed scoring, pruning, retraining and evaluation sweeps.

Every sweep writes into ``out_dir``:

* ``sweep_<name>.tsv`` with one row per cell,
* ``manifest_<name>.json`` echoing the config and per-cell results,
* ``scores/<metric>_step<k>.tsv`` for every score table used,
* ``selections/<name>_<cell_id>.json`` for every trained subset,
* ``<name>.png`` unless plotting is disabled.

Retraining seeds are derived as ``mix(base_seed, cell_key, retrain_seed)``
where ``cell_key`` is the FNV-1a hash of the cell's policy description, so a
policy that shows up in two sweeps is retrained identically in both.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import json
import logging
import math
from pathlib import Path
import time

import numpy as np
import yaml

from . import __version__
from ._util import fnv1a64, mix
from .analysis import CorrelationReport, seed_correlation_study, tv_distance
from .dataset import Dataset, NoiseRecord, inject_label_noise, label_histogram, load_jsonl, split
from .errors import GrandPruneError, UsageError
from .features import EmbeddingFeaturizer, FeatureSpec, HashingFeaturizer, load_embeddings
from .model import TrainConfig, evaluate, train
from .pruning import SelectionResult, full_selection, materialize, random_select, select_window
from .scoring import ScoreTable, aggregate_seeds, normalize_metric, score_dataset
from . import toy

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("cell_id", "policy_kind", "metric", "step", "keep_frac", "delete_frac", "acc_mean", "acc_std", "n_runs")
SELECT_STREAM = 0x5E1EC7
NOTES = (
    "features are a fixed featurizer standing in for a pre-trained encoder",
    "GraNd is the final-layer gradient norm including the bias, i.e. EL2N * sqrt(||h||^2 + 1)",
    "acc_std is the population standard deviation over retraining runs",
)


@dataclass
class ExperimentConfig:
    train_path: str | None = None
    eval_path: str | None = None
    label_names: list | None = None
    eval_fraction: float = 0.2
    split_seed: int = 0
    noise_rate: float = 0.0
    noise_seed: int = 0
    toy: dict | None = None
    features: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 0
    score_seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    retrain_seeds: list = field(default_factory=lambda: [101, 102, 103])
    metrics: list = field(default_factory=lambda: ["EL2N"])
    steps: list = field(default_factory=list)
    score_step: int | None = None
    keep_fraction: float = 0.7
    keep_fractions: list = field(default_factory=lambda: [0.3, 0.5, 0.7, 0.9, 1.0])
    delete_fractions: list = field(default_factory=lambda: [0.0, 0.02, 0.05, 0.1])
    out_dir: str = "out"
    plots: bool = True

    def __post_init__(self):
        self.metrics = [normalize_metric(m) for m in self.metrics]
        if not self.score_seeds or not self.retrain_seeds:
            raise UsageError("score_seeds and retrain_seeds must be non-empty")
        for name in ("score_seeds", "retrain_seeds"):
            seeds = getattr(self, name)
            if len(set(seeds)) != len(seeds):
                raise UsageError(f"{name} contains duplicates: {seeds}")
        if set(self.score_seeds) & set(self.retrain_seeds):
            raise UsageError("score_seeds and retrain_seeds must be disjoint")
        for f in [self.keep_fraction, *self.keep_fractions]:
            if not 0.0 < f <= 1.0:
                raise UsageError(f"keep fraction {f} outside (0, 1]")
        for f in self.delete_fractions:
            if not 0.0 <= f < self.keep_fraction:
                raise UsageError(f"delete fraction {f} outside [0, keep_fraction)")
        if self.train_path is None and self.toy is None:
            raise UsageError("config needs train_path or a toy section")
        self.train = dict(self.train)
        self.features = dict(self.features)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"{path}: {exc}") from None
        if not isinstance(obj, dict):
            raise UsageError(f"{path}: config must be a mapping")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        """Config echo for manifests; the output location is left out."""
        d = asdict(self)
        d.pop("out_dir")
        return d

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        opts = {"learning_rate": 0.5, "batch_size": 32, "epochs": 3, "momentum": 0.9, "hidden_dim": 0}
        opts.update(self.train)
        opts.update(overrides)
        return TrainConfig(seed=seed, **opts)


@dataclass(frozen=True)
class Cell:
    kind: str
    metric: str | None = None
    step: int | None = None
    keep: float = 1.0
    delete: float = 0.0

    @property
    def key(self) -> int:
        text = f"{self.kind}|{self.metric}|{self.step}|{self.keep!r}|{self.delete!r}"
        return fnv1a64(text.encode())


def make_featurizer(spec: dict):
    spec = dict(spec)
    emb = spec.pop("embeddings", None)
    if emb is not None:
        return EmbeddingFeaturizer(load_embeddings(emb), bool(spec.get("l2_normalize", False)))
    if "ngram_orders" in spec:
        spec["ngram_orders"] = tuple(spec["ngram_orders"])
    return HashingFeaturizer(FeatureSpec(**spec))


class Workspace:
    """Loaded data, features and cached score tables for one config."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.noise: NoiseRecord | None = None
        self.featurizer = make_featurizer(cfg.features)
        if cfg.toy is not None:
            t = dict(cfg.toy)
            train_set, eval_set, self.noise = toy.make_task(
                int(t.get("seed", 0)),
                int(t.get("n_train", 2000)),
                int(t.get("n_eval", 1000)),
                float(t.get("noise_rate", 0.1)),
            )
            self.X = self.featurizer.transform(train_set)
        else:
            full = load_jsonl(cfg.train_path, cfg.label_names)
            if cfg.eval_path:
                train_set = full
                eval_set = load_jsonl(cfg.eval_path, full.label_names)
            else:
                train_set, eval_set = split(full, cfg.eval_fraction, cfg.split_seed)
            # features first: embedding lookups need the original ids
            self.X = self.featurizer.transform(train_set)
            if not train_set.has_dense_ids():
                train_set = train_set.reindexed()
            if cfg.noise_rate > 0:
                train_set, self.noise = inject_label_noise(train_set, cfg.noise_rate, cfg.noise_seed)
        self.train_set: Dataset = train_set
        self.eval_set: Dataset = eval_set
        self.X_eval = self.featurizer.transform(eval_set)
        self._tables: dict = {}

    @property
    def steps_per_epoch(self) -> int:
        return self.cfg.train_config(0).steps_per_epoch(len(self.train_set))

    @property
    def default_score_step(self) -> int:
        if self.cfg.score_step is not None:
            return int(self.cfg.score_step)
        return self.steps_per_epoch

    def score_tables(self, steps) -> dict:
        """ScoreTables keyed by ``(metric, step)``; one training run per score seed covers all steps."""
        steps = sorted(set(int(s) for s in steps))
        missing = [s for s in steps if any((m, s) not in self._tables for m in self.cfg.metrics)]
        if missing:
            epochs = max(1, math.ceil(missing[-1] / self.steps_per_epoch))

            def run(seed):
                tc = self.cfg.train_config(seed, epochs=epochs, checkpoint_steps=tuple(missing))
                res = train(self.train_set, self.featurizer, tc, X=self.X, stop_at_last_checkpoint=True)
                return {
                    (m, snap.step): score_dataset(snap, self.train_set, self.featurizer, m, X=self.X)
                    for snap in res.snapshots
                    for m in self.cfg.metrics
                }

            per_seed = dict(zip(self.cfg.score_seeds, self._map(run, self.cfg.score_seeds)))
            for m in self.cfg.metrics:
                for s in missing:
                    self._tables[(m, s)] = aggregate_seeds({seed: per_seed[seed][(m, s)] for seed in per_seed}, s, m)
        return {(m, s): self._tables[(m, s)] for m in self.cfg.metrics for s in steps}

    def _map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def select(self, cell: Cell) -> SelectionResult:
        if cell.kind == "full":
            return full_selection(self.train_set)
        if cell.kind == "random":
            return random_select(self.train_set, cell.keep, mix(self.cfg.seed, cell.key, SELECT_STREAM))
        table = self.score_tables([cell.step])[(cell.metric, cell.step)]
        return select_window(table.mean, cell.delete, cell.keep, cell.metric, cell.step)

    def run_cell(self, cell: Cell) -> dict:
        """Select, retrain once per retrain seed, evaluate every epoch."""
        sel = self.select(cell)
        subset = materialize(self.train_set, sel)
        rows = np.sort(np.asarray(sel.ids, dtype=np.int64))
        X_sub = self.X[rows]
        final, best = [], []
        for r in self.cfg.retrain_seeds:
            seed = mix(self.cfg.seed, cell.key, r)
            tc = self.cfg.train_config(seed)
            per_epoch = tc.steps_per_epoch(len(subset))
            tc = replace(tc, checkpoint_steps=tuple(per_epoch * (e + 1) for e in range(tc.epochs)))
            res = train(subset, self.featurizer, tc, X=X_sub)
            accs = [evaluate(s.params, self.eval_set, self.featurizer, X=self.X_eval) for s in res.snapshots]
            final.append(accs[-1])
            best.append(max(accs))
        return {"selection": sel, "final": final, "best": best}


def _mean_std(values):
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def run_cells(ws: Workspace, name: str, cells: list[Cell], extra: dict | None = None) -> dict:
    """Execute cells (possibly in parallel) and persist TSV, manifest, scores and selections."""
    started = time.time()
    out = Path(ws.cfg.out_dir)
    (out / "scores").mkdir(parents=True, exist_ok=True)
    (out / "selections").mkdir(parents=True, exist_ok=True)
    score_steps = sorted({c.step for c in cells if c.step is not None})
    tables = ws.score_tables(score_steps) if score_steps else {}

    def job(item):
        idx, cell = item
        try:
            return ws.run_cell(cell)
        except GrandPruneError as exc:
            raise type(exc)(f"cell {idx} ({cell.kind}, metric={cell.metric}, step={cell.step}, keep={cell.keep}, delete={cell.delete}): {exc}") from exc

    results = ws._map(job, list(enumerate(cells)))

    score_files = {}
    for (metric, step), table in sorted(tables.items()):
        fname = f"scores/{metric}_step{step}.tsv"
        table.save(out / fname)
        score_files[(metric, step)] = fname

    rows, manifest_cells = [], []
    for idx, (cell, res) in enumerate(zip(cells, results)):
        cell_id = f"c{idx:03d}"
        sel_file = f"selections/{name}_{cell_id}.json"
        res["selection"].save(out / sel_file)
        acc_mean, acc_std = _mean_std(res["final"])
        best_mean, best_std = _mean_std(res["best"])
        row = {
            "cell_id": cell_id,
            "policy_kind": cell.kind,
            "metric": cell.metric or "-",
            "step": cell.step if cell.step is not None else "-",
            "keep_frac": cell.keep,
            "delete_frac": cell.delete,
            "acc_mean": acc_mean,
            "acc_std": acc_std,
            "n_runs": len(res["final"]),
        }
        rows.append(row)
        manifest_cells.append(
            {
                **row,
                "n_train": len(res["selection"]),
                "accuracies": res["final"],
                "best_epoch_acc_mean": best_mean,
                "best_epoch_acc_std": best_std,
                "best_epoch_accuracies": res["best"],
                "retrain_seeds": [mix(ws.cfg.seed, cell.key, r) for r in ws.cfg.retrain_seeds],
                "selection_file": sel_file,
                "score_file": score_files.get((cell.metric, cell.step)),
            }
        )

    tsv = out / f"sweep_{name}.tsv"
    with open(tsv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row[c]) for c in SWEEP_COLUMNS) + "\n")

    manifest = {
        "artifact_version": __version__,
        "sweep": name,
        "config": ws.cfg.to_dict(),
        "featurizer": ws.featurizer.describe(),
        "n_train": len(ws.train_set),
        "n_eval": len(ws.eval_set),
        "steps_per_epoch": ws.steps_per_epoch,
        "noise": None if ws.noise is None else {"rate": ws.noise.noise_rate, "n_flipped": len(ws.noise.flipped_ids)},
        "notes": list(NOTES),
        "cells": manifest_cells,
        "timing": {"started_unix": started, "elapsed_s": time.time() - started},
    }
    if extra:
        manifest.update(extra)
    (out / f"manifest_{name}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    log.info("wrote %s (%d cells)", tsv, len(rows))
    return {"rows": rows, "manifest": manifest, "tsv": tsv}


def _plot(ws: Workspace, kind: str, rows, **kw):
    if not ws.cfg.plots:
        return None
    from . import plotting

    path = Path(ws.cfg.out_dir) / f"{kind}.png"
    getattr(plotting, f"plot_{kind}")(rows, path, **kw)
    return path


def run_step_sweep(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Prune at each score-computation step; adds random and full-data baselines."""
    if not cfg.steps:
        raise UsageError("step sweep needs a non-empty 'steps' list")
    ws = Workspace(cfg, threads)
    steps = sorted(set(int(s) for s in cfg.steps))
    cells = [Cell("top", m, s, cfg.keep_fraction) for m in cfg.metrics for s in steps]
    cells += [Cell("random", None, None, cfg.keep_fraction), Cell("full")]
    result = run_cells(ws, "steps", cells)

    # label balance of each kept subset (the Figure 2 view)
    tables = ws.score_tables(steps)
    base = label_histogram(ws.train_set)
    hist_rows = []
    for m in cfg.metrics:
        for s in steps:
            sel = select_window(tables[(m, s)].mean, 0.0, cfg.keep_fraction, m, s)
            h = label_histogram(ws.train_set, sel.ids)
            hist_rows.append({"metric": m, "step": s, "hist": h.tolist(), "tv": tv_distance(h, base)})
    path = Path(cfg.out_dir) / "label_hist_steps.tsv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        names = [f"frac_{n}" for n in ws.train_set.label_names]
        fh.write("\t".join(["metric", "step", *names, "tv_to_full"]) + "\n")
        for r in hist_rows:
            fh.write("\t".join([r["metric"], str(r["step"]), *(f"{v:.6f}" for v in r["hist"]), f"{r['tv']:.6f}"]) + "\n")
    result["label_hist"] = hist_rows
    result["figures"] = [
        _plot(ws, "step_sweep", result["rows"]),
        _plot(ws, "label_distribution", hist_rows, label_names=ws.train_set.label_names),
    ]
    return result


def run_fraction_sweep(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Top-k training at one score step, with a random baseline per fraction."""
    if not cfg.keep_fractions:
        raise UsageError("fraction sweep needs a non-empty 'keep_fractions' list")
    ws = Workspace(cfg, threads)
    step = ws.default_score_step
    fractions = sorted(set(float(f) for f in cfg.keep_fractions))
    cells = [Cell("top", m, step, k) for m in cfg.metrics for k in fractions]
    cells += [Cell("random", None, None, k) for k in fractions]
    result = run_cells(ws, "fractions", cells)
    result["figures"] = [_plot(ws, "fraction_sweep", result["rows"])]
    return result


def run_delete_sweep(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Keep the top ``keep_fraction`` with the highest ``d`` of the full set removed."""
    if not cfg.delete_fractions:
        raise UsageError("delete sweep needs a non-empty 'delete_fractions' list")
    ws = Workspace(cfg, threads)
    step = ws.default_score_step
    deletes = sorted(set(float(d) for d in cfg.delete_fractions) | {0.0})
    cells = [Cell("top" if d == 0 else "window", m, step, cfg.keep_fraction, d) for m in cfg.metrics for d in deletes]
    cells.append(Cell("full"))
    result = run_cells(ws, "delete", cells)
    result["figures"] = [_plot(ws, "delete_sweep", result["rows"])]
    return result


def run_correlation(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Seed-vs-mean Spearman study at the score step, one report per metric."""
    if len(cfg.score_seeds) < 2:
        raise UsageError("correlation study needs at least 2 score seeds")
    ws = Workspace(cfg, threads)
    step = ws.default_score_step
    tables = ws.score_tables([step])
    out = Path(cfg.out_dir)
    (out / "scores").mkdir(parents=True, exist_ok=True)
    reports: dict[str, CorrelationReport] = {}
    for m in cfg.metrics:
        table: ScoreTable = tables[(m, step)]
        table.save(out / f"scores/{m}_step{step}.tsv")
        reports[m] = seed_correlation_study(table.seed_scores)
    payload = {
        "step": step,
        "seeds": sorted(cfg.score_seeds),
        "reports": {m: r.to_json() for m, r in reports.items()},
    }
    (out / "correlation.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return {"reports": reports, "payload": payload, "workspace": ws}
