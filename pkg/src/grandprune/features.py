"""Text to fixed-dimension feature vectors: signed feature hashing or a precomputed embedding table.

The hash of an n-gram is 64-bit FNV-1a over the UTF-8 bytes of its tokens
joined by 0x1F. Bucket index is ``hash mod D`` and the sign is ``-1`` when
bit 63 of the hash is set.
"""

from __future__ import annotations

from dataclasses import dataclass
import functools
import math
import re
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ._util import fnv1a64
from .dataset import Dataset, Example
from .errors import DataError, UsageError

_SPLIT = re.compile(r"[\W_]+")
_JOINER = b"\x1f"


@dataclass(frozen=True)
class FeatureSpec:
    dim: int = 2**18
    ngram_orders: tuple[int, ...] = (1, 2)
    l2_normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "ngram_orders", tuple(sorted(set(self.ngram_orders))))
        if self.dim < 2 or self.dim & (self.dim - 1):
            raise UsageError(f"feature dim must be a power of two >= 2, got {self.dim}")
        if not self.ngram_orders or not set(self.ngram_orders) <= {1, 2}:
            raise UsageError(f"ngram_orders must be a non-empty subset of {{1, 2}}, got {self.ngram_orders}")


@dataclass(frozen=True)
class FeatureVector:
    """Sparse vector with strictly increasing ``indices``."""

    indices: np.ndarray
    weights: np.ndarray
    dim: int

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.weights
        return out

    def dot(self, w: np.ndarray) -> float:
        return float(np.dot(w[self.indices], self.weights))

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.weights, self.weights)))

    @classmethod
    def from_dense(cls, values) -> "FeatureVector":
        values = np.asarray(values, dtype=float)
        idx = np.flatnonzero(values)
        return cls(idx, values[idx], values.size)


def tokenize(text: str) -> list[str]:
    return [tok for tok in _SPLIT.split(text.lower()) if tok]


def ngrams(tokens: Sequence[str], orders: Sequence[int]):
    for n in orders:
        for i in range(len(tokens) - n + 1):
            yield tokens[i : i + n]


@functools.lru_cache(maxsize=1 << 20)
def ngram_hash(ngram: tuple[str, ...]) -> int:
    return fnv1a64(_JOINER.join(tok.encode("utf-8") for tok in ngram))


def hash_features(tokens: Sequence[str], spec: FeatureSpec) -> FeatureVector:
    acc: dict[int, float] = {}
    for gram in ngrams(list(tokens), spec.ngram_orders):
        h = ngram_hash(tuple(gram))
        idx = h % spec.dim
        acc[idx] = acc.get(idx, 0.0) + (-1.0 if h >> 63 else 1.0)
    idx = np.array(sorted(k for k, v in acc.items() if v != 0.0), dtype=np.int64)
    weights = np.array([acc[i] for i in idx], dtype=float)
    if spec.l2_normalize and weights.size:
        weights /= math.sqrt(float(np.dot(weights, weights)))
    return FeatureVector(idx, weights, spec.dim)


class HashingFeaturizer:
    def __init__(self, spec: FeatureSpec | None = None):
        self.spec = spec or FeatureSpec()

    @property
    def dim(self) -> int:
        return self.spec.dim

    def vector(self, example: Example) -> FeatureVector:
        return hash_features(tokenize(example.text), self.spec)

    def transform(self, d: Dataset) -> sp.csr_matrix:
        """One row per example, in dataset storage order."""
        indptr = [0]
        indices = []
        data = []
        for ex in d:
            v = self.vector(ex)
            indices.append(v.indices)
            data.append(v.weights)
            indptr.append(indptr[-1] + v.indices.size)
        return sp.csr_matrix(
            (
                np.concatenate(data) if data else np.zeros(0),
                np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
                np.array(indptr),
            ),
            shape=(len(d), self.spec.dim),
        )

    def describe(self) -> dict:
        return {
            "kind": "hashing",
            "dim": self.spec.dim,
            "ngram_orders": list(self.spec.ngram_orders),
            "l2_normalize": self.spec.l2_normalize,
        }


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    rows: dict

    def __post_init__(self):
        for ex_id, row in self.rows.items():
            if len(row) != self.dim:
                raise DataError(f"embedding for id {ex_id} has {len(row)} values, expected {self.dim}")
            if not np.all(np.isfinite(row)):
                raise DataError(f"embedding for id {ex_id} has non-finite values")


def load_embeddings(path) -> EmbeddingTable:
    """Read ``#dim<TAB>D`` followed by ``id<TAB>v1..vD`` lines."""
    rows = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if lineno == 1:
                head = line.split("\t")
                if len(head) != 2 or head[0] != "#dim":
                    raise DataError(f"{path}:1: expected '#dim<TAB>D' header")
                try:
                    dim = int(head[1])
                except ValueError:
                    raise DataError(f"{path}:1: bad dimension {head[1]!r}") from None
                if dim < 1:
                    raise DataError(f"{path}:1: dimension must be positive")
                continue
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            try:
                ex_id = int(parts[0])
                values = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if ex_id in rows:
                raise DataError(f"{path}:{lineno}: duplicate id {ex_id}")
            rows[ex_id] = values
    if dim is None:
        raise DataError(f"{path}: empty embedding file")
    return EmbeddingTable(dim, rows)


def write_embeddings(table: EmbeddingTable, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#dim\t{table.dim}\n")
        for ex_id in sorted(table.rows):
            fh.write(str(ex_id) + "\t" + "\t".join(repr(float(v)) for v in table.rows[ex_id]) + "\n")


class EmbeddingFeaturizer:
    """Looks examples up by id in an :class:`EmbeddingTable`."""

    def __init__(self, table: EmbeddingTable, l2_normalize: bool = False):
        self.table = table
        self.l2_normalize = l2_normalize

    @property
    def dim(self) -> int:
        return self.table.dim

    def _row(self, ex_id: int) -> np.ndarray:
        try:
            row = self.table.rows[ex_id]
        except KeyError:
            raise DataError(f"no embedding for example id {ex_id}") from None
        if self.l2_normalize:
            norm = np.linalg.norm(row)
            if norm > 0:
                row = row / norm
        return row

    def vector(self, example: Example) -> FeatureVector:
        return FeatureVector.from_dense(self._row(example.id))

    def transform(self, d: Dataset) -> np.ndarray:
        return np.vstack([self._row(ex.id) for ex in d])

    def describe(self) -> dict:
        return {"kind": "embeddings", "dim": self.dim, "l2_normalize": self.l2_normalize}
