"""Labeled text datasets: JSONL loading, stratified splits, label noise and label statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._util import floor_count
from .errors import DataError, UsageError


@dataclass(frozen=True)
class Example:
    id: int
    text: str
    label: int


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    label_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "label_names", tuple(self.label_names))
        if len(self.label_names) < 2:
            raise DataError(f"need at least 2 classes, got {len(self.label_names)}")
        if not self.examples:
            raise DataError("empty dataset")
        seen = set()
        k = len(self.label_names)
        for ex in self.examples:
            if ex.id < 0:
                raise DataError(f"negative id {ex.id}")
            if ex.id in seen:
                raise DataError(f"duplicate id {ex.id}")
            seen.add(ex.id)
            if not 0 <= ex.label < k:
                raise DataError(f"example {ex.id}: label {ex.label} outside [0, {k})")

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def ids(self) -> np.ndarray:
        return np.fromiter((ex.id for ex in self.examples), dtype=np.int64, count=len(self))

    @property
    def labels(self) -> np.ndarray:
        return np.fromiter((ex.label for ex in self.examples), dtype=np.int64, count=len(self))

    @property
    def texts(self) -> list[str]:
        return [ex.text for ex in self.examples]

    def has_dense_ids(self) -> bool:
        """True when ids are exactly 0..N-1 in storage order."""
        return all(ex.id == i for i, ex in enumerate(self.examples))

    def by_id(self) -> dict[int, Example]:
        return {ex.id: ex for ex in self.examples}

    def subset(self, ids: Iterable[int]) -> "Dataset":
        index = self.by_id()
        try:
            chosen = [index[int(i)] for i in ids]
        except KeyError as exc:
            raise DataError(f"unknown id {exc.args[0]}") from None
        return Dataset(tuple(chosen), self.label_names)

    def reindexed(self) -> "Dataset":
        """Copy with ids renumbered 0..N-1 in storage order."""
        return Dataset(
            tuple(Example(i, ex.text, ex.label) for i, ex in enumerate(self.examples)),
            self.label_names,
        )

    def with_labels(self, labels: Sequence[int]) -> "Dataset":
        return Dataset(
            tuple(Example(ex.id, ex.text, int(y)) for ex, y in zip(self.examples, labels)),
            self.label_names,
        )


@dataclass(frozen=True)
class NoiseRecord:
    flipped_ids: frozenset
    original_labels: dict = field(default_factory=dict)
    noise_rate: float = 0.0

    def to_json(self) -> dict:
        return {
            "rate": self.noise_rate,
            "flipped": [
                {"id": int(i), "original_label": int(self.original_labels[i])}
                for i in sorted(self.flipped_ids)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseRecord":
        original = {int(r["id"]): int(r["original_label"]) for r in obj["flipped"]}
        return cls(frozenset(original), original, float(obj["rate"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "NoiseRecord":
        return cls.from_json(json.loads(Path(path).read_text()))


def load_jsonl(path, label_names: Sequence[str] | None = None) -> Dataset:
    """Read one ``{"text", "label"[, "id"]}`` object per line.

    String labels are resolved against ``label_names`` when given, otherwise
    the vocabulary is built in first-seen order. Integer labels are taken as
    class indices. Blank lines are skipped.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
                raise DataError(f"{path}:{lineno}: record needs 'text' and 'label' fields")
            if not isinstance(obj["text"], str):
                raise DataError(f"{path}:{lineno}: 'text' must be a string")
            records.append((lineno, obj))
    if not records:
        raise DataError("empty dataset")

    has_id = ["id" in obj for _, obj in records]
    if any(has_id) and not all(has_id):
        raise DataError(f"{path}: 'id' must be present on every line or on none")

    names = list(label_names) if label_names is not None else None
    vocab = {name: k for k, name in enumerate(names)} if names is not None else {}
    raw_labels = [obj["label"] for _, obj in records]
    if names is None and all(_is_int(y) for y in raw_labels):
        names = [str(k) for k in range(max(raw_labels) + 1)]

    examples = []
    seen_ids: dict[int, int] = {}
    for pos, (lineno, obj) in enumerate(records):
        y = obj["label"]
        if _is_int(y):
            if names is None:
                raise DataError(f"{path}:{lineno}: integer label mixed with string labels")
            if not 0 <= y < len(names):
                raise DataError(f"{path}:{lineno}: label {y} outside [0, {len(names)})")
            label = y
        elif isinstance(y, str):
            if y not in vocab:
                if label_names is not None or names is not None:
                    raise DataError(f"{path}:{lineno}: unknown label {y!r}")
                vocab[y] = len(vocab)
            label = vocab[y]
        else:
            raise DataError(f"{path}:{lineno}: label must be an integer or a string")
        if any(has_id):
            ex_id = obj["id"]
            if not _is_int(ex_id) or ex_id < 0:
                raise DataError(f"{path}:{lineno}: id must be a non-negative integer")
            if ex_id in seen_ids:
                raise DataError(
                    f"{path}:{lineno}: duplicate id {ex_id} (first on line {seen_ids[ex_id]})"
                )
            seen_ids[ex_id] = lineno
        else:
            ex_id = pos
        examples.append(Example(int(ex_id), obj["text"], int(label)))

    if names is None:
        names = list(vocab)
    return Dataset(tuple(examples), tuple(names))


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def write_jsonl(d: Dataset, path, label_strings: bool = False):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in d:
            label = d.label_names[ex.label] if label_strings else ex.label
            fh.write(json.dumps({"id": ex.id, "text": ex.text, "label": label}, ensure_ascii=False))
            fh.write("\n")


def validation_report(d: Dataset) -> dict:
    counts = np.bincount(d.labels, minlength=d.num_classes)
    return {
        "n": len(d),
        "num_classes": d.num_classes,
        "class_counts": {name: int(c) for name, c in zip(d.label_names, counts)},
        "empty_text_ids": [ex.id for ex in d if not ex.text.strip()],
    }


def split(d: Dataset, eval_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded train/eval partition.

    The eval side gets ``floor(eval_fraction * N)`` examples. Each class
    contributes ``floor(eval_fraction * n_k)`` of them and the leftover
    slots go to the classes with the largest remainders (lower class index
    first on ties), so per-class proportions are within one example.
    """
    n = len(d)
    if not 0.0 < eval_fraction < 1.0:
        raise UsageError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    n_eval = floor_count(eval_fraction, n)
    if n_eval < 1 or n - n_eval < 1:
        raise UsageError(f"eval_fraction={eval_fraction} on N={n} leaves an empty side")

    labels = d.labels
    rng = np.random.default_rng(seed)
    per_class = [np.flatnonzero(labels == k) for k in range(d.num_classes)]
    exact = [eval_fraction * len(idx) for idx in per_class]
    take = [floor_count(eval_fraction, len(idx)) for idx in per_class]
    leftover = n_eval - sum(take)
    order = sorted(range(d.num_classes), key=lambda k: (-(exact[k] - take[k]), k))
    for k in order:
        if leftover == 0:
            break
        if take[k] < len(per_class[k]):
            take[k] += 1
            leftover -= 1

    eval_pos = []
    for idx, t in zip(per_class, take):
        eval_pos.extend(rng.permutation(idx)[:t].tolist())
    eval_mask = np.zeros(n, dtype=bool)
    eval_mask[eval_pos] = True
    train = Dataset(tuple(ex for ex, m in zip(d.examples, eval_mask) if not m), d.label_names)
    evals = Dataset(tuple(ex for ex, m in zip(d.examples, eval_mask) if m), d.label_names)
    return train, evals


def inject_label_noise(d: Dataset, rate: float, seed: int) -> tuple[Dataset, NoiseRecord]:
    """Flip ``floor(rate * N)`` labels, each to a uniformly drawn wrong class."""
    if not 0.0 <= rate <= 1.0:
        raise UsageError(f"noise rate must be in [0, 1], got {rate}")
    n = len(d)
    n_flip = floor_count(rate, n)
    rng = np.random.default_rng(seed)
    positions = np.sort(rng.choice(n, size=n_flip, replace=False))
    labels = d.labels.copy()
    k = d.num_classes
    original = {}
    for pos in positions:
        old = int(labels[pos])
        new = int(rng.integers(k - 1))
        labels[pos] = new + 1 if new >= old else new
        original[d.examples[pos].id] = old
    record = NoiseRecord(frozenset(original), original, float(rate))
    if n_flip == 0:
        return d, record
    return d.with_labels(labels), record


def label_histogram(d: Dataset, ids: Iterable[int] | None = None) -> np.ndarray:
    """Fraction of each label among ``ids`` (default: the whole dataset)."""
    if ids is None:
        labels = d.labels
    else:
        index = d.by_id()
        try:
            labels = np.array([index[int(i)].label for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown id {exc.args[0]}") from None
    if labels.size == 0:
        raise DataError("label histogram of an empty subset")
    return np.bincount(labels, minlength=d.num_classes) / labels.size
