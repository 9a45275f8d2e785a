"""Turn score vectors into training subsets."""

from __future__ import annotations

from dataclasses import asdict, dataclass
import json
from pathlib import Path

import numpy as np

from ._util import floor_count
from .dataset import Dataset
from .errors import DataError, UsageError


@dataclass(frozen=True)
class Policy:
    kind: str
    keep_fraction: float = 1.0
    delete_fraction: float = 0.0
    seed: int | None = None
    metric: str | None = None
    step: int | None = None


@dataclass(frozen=True)
class SelectionResult:
    ids: tuple
    policy: Policy
    source_size: int

    def __len__(self):
        return len(self.ids)

    def to_json(self) -> dict:
        return {"policy": asdict(self.policy), "source_size": self.source_size, "ids": [int(i) for i in self.ids]}

    @classmethod
    def from_json(cls, obj) -> "SelectionResult":
        return cls(tuple(int(i) for i in obj["ids"]), Policy(**obj["policy"]), int(obj["source_size"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "SelectionResult":
        return cls.from_json(json.loads(Path(path).read_text()))


def rank(scores) -> np.ndarray:
    """Ids (positions) ordered by descending score, ties by ascending id."""
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise DataError("cannot rank non-finite scores")
    ids = np.arange(scores.size)
    return np.lexsort((ids, -scores))


def select_window(scores, delete_fraction: float, keep_fraction: float, metric=None, step=None) -> SelectionResult:
    """Keep rank positions ``[floor(d*N), floor(k*N))``.

    Both fractions are measured against the full dataset size.
    """
    n = len(scores)
    if not 0.0 <= delete_fraction < 1.0 or not 0.0 < keep_fraction <= 1.0:
        raise UsageError(f"need 0 <= delete < 1 and 0 < keep <= 1 (got {delete_fraction}, {keep_fraction})")
    if delete_fraction >= keep_fraction:
        raise UsageError(f"delete fraction {delete_fraction} must be below keep fraction {keep_fraction}")
    lo, hi = floor_count(delete_fraction, n), floor_count(keep_fraction, n)
    if hi <= lo:
        raise UsageError(f"empty selection window [{lo}, {hi}) on N={n}")
    order = rank(scores)
    kind = "top" if lo == 0 else "window"
    policy = Policy(kind, float(keep_fraction), float(delete_fraction), None, metric, step)
    return SelectionResult(tuple(int(i) for i in order[lo:hi]), policy, n)


def random_select(d: Dataset, fraction: float, seed: int) -> SelectionResult:
    """Uniform sample of ``floor(fraction * N)`` ids without replacement, returned sorted."""
    n = len(d)
    if not 0.0 < fraction <= 1.0:
        raise UsageError(f"fraction must be in (0, 1], got {fraction}")
    size = floor_count(fraction, n)
    if size < 1:
        raise UsageError(f"fraction {fraction} of N={n} selects nothing")
    ids = d.ids
    chosen = np.sort(ids[np.random.default_rng(seed).choice(n, size=size, replace=False)])
    return SelectionResult(tuple(int(i) for i in chosen), Policy("random", float(fraction), 0.0, int(seed)), n)


def full_selection(d: Dataset) -> SelectionResult:
    return SelectionResult(tuple(int(i) for i in d.ids), Policy("full"), len(d))


def materialize(d: Dataset, sel: SelectionResult) -> Dataset:
    """Selected examples in the dataset's own storage order, ids preserved."""
    if not sel.ids:
        raise DataError("selection is empty")
    wanted = set(sel.ids)
    if len(wanted) != len(sel.ids):
        raise DataError("selection contains duplicate ids")
    unknown = wanted - set(d.ids.tolist())
    if unknown:
        raise DataError(f"unknown id {min(unknown)}")
    return Dataset(tuple(ex for ex in d if ex.id in wanted), d.label_names)
