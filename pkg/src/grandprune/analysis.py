"""Seed-correlation study, label-distribution distance, extreme-example reports and noise recall."""

from __future__ import annotations

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np

from ._util import floor_count
from .dataset import Dataset, NoiseRecord
from .errors import DataError, UsageError
from .model import Snapshot, predict
from .pruning import rank
from .scoring import ScoreTable


class UndefinedCorrelationError(DataError):
    pass


def fractional_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the average of the positions they span."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(values.size)
    # boundaries of runs of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], values.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def spearman(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"spearman needs two equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise DataError("spearman needs at least 2 observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DataError("spearman inputs must be finite")
    ra = fractional_ranks(a)
    rb = fractional_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return float(np.clip(np.dot(ra, rb) / denom, -1.0, 1.0))


@dataclass
class CorrelationReport:
    per_seed_rho: dict
    mean_rho: float
    std_rho: float
    pair_rho: float | None = None
    pair_seeds: tuple | None = None

    def to_json(self) -> dict:
        return {
            "per_seed_rho": {str(s): r for s, r in sorted(self.per_seed_rho.items())},
            "mean_rho": self.mean_rho,
            "std_rho": self.std_rho,
            "std_ddof": 0,
            "pair_rho": self.pair_rho,
            "pair_seeds": list(self.pair_seeds) if self.pair_seeds else None,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def seed_correlation_study(per_seed: dict, with_pair: bool = True) -> CorrelationReport:
    """Spearman of each seed's scores against the mean over all seeds.

    ``pair_rho`` compares the mean of the two lowest-numbered seeds with the
    all-seed mean. ``std_rho`` is the population standard deviation.
    """
    if len(per_seed) < 2:
        raise UsageError("seed correlation needs at least 2 seeds")
    seeds = sorted(per_seed)
    stacked = np.vstack([np.asarray(per_seed[s], dtype=float) for s in seeds])
    mean_all = stacked.mean(axis=0)
    rhos = {s: spearman(stacked[i], mean_all) for i, s in enumerate(seeds)}
    values = np.array([rhos[s] for s in seeds])
    pair = pair_seeds = None
    if with_pair:
        pair_seeds = (seeds[0], seeds[1])
        pair = spearman(stacked[:2].mean(axis=0), mean_all)
    return CorrelationReport(rhos, float(values.mean()), float(values.std()), pair, pair_seeds)


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for name, h in (("p", p), ("q", q)):
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise DataError(f"{name} is not a histogram (sum={h.sum()})")
    if p.shape != q.shape:
        raise DataError("histograms differ in length")
    return float(0.5 * np.abs(p - q).sum())


def noise_recall(table: ScoreTable, noise: NoiseRecord, top_fraction: float) -> float:
    """Share of flipped ids that land in the top ``floor(top_fraction * N)`` by mean score."""
    if not noise.flipped_ids:
        raise DataError("noise record is empty")
    if not 0.0 < top_fraction <= 1.0:
        raise UsageError(f"top_fraction must be in (0, 1], got {top_fraction}")
    top = set(rank(table.mean)[: floor_count(top_fraction, len(table))].tolist())
    return len(noise.flipped_ids & top) / len(noise.flipped_ids)


def extremes_report(table: ScoreTable, d: Dataset, snapshot: Snapshot, featurizer, count: int, width: int = 80, X=None) -> list[dict]:
    """Top-``count`` and bottom-``count`` examples by mean score, both in rank order."""
    n = len(table)
    if n != len(d) or not d.has_dense_ids():
        raise DataError("score table and dataset must cover ids 0..N-1")
    if count < 1 or 2 * count > n:
        raise UsageError(f"count must be in [1, N/2], got {count} for N={n}")
    if X is None:
        X = featurizer.transform(d)
    preds = predict(snapshot.params, X)
    order = rank(table.mean)
    rows = []
    for block, ids in (("top", order[:count]), ("bottom", order[n - count :])):
        for i in ids:
            ex = d.examples[i]
            text = ex.text if len(ex.text) <= width else ex.text[: width - 3] + "..."
            rows.append(
                {
                    "block": block,
                    "id": int(ex.id),
                    "text": text.replace("\t", " ").replace("\n", " "),
                    "score": float(table.mean[i]),
                    "gold": f"{d.label_names[ex.label]} ({ex.label})",
                    "prediction": f"{d.label_names[preds[i]]} ({preds[i]})",
                }
            )
    return rows


_REPORT_COLUMNS = ("block", "id", "score", "gold", "prediction", "text")


def write_report_tsv(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(_REPORT_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join(f"{r[c]:.6f}" if c == "score" else str(r[c]) for c in _REPORT_COLUMNS) + "\n")


def format_report(rows) -> str:
    cells = [[c for c in _REPORT_COLUMNS]]
    cells += [[f"{r[c]:.6f}" if c == "score" else str(r[c]) for c in _REPORT_COLUMNS] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(_REPORT_COLUMNS))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
