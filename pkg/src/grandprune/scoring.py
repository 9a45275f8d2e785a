"""Per-example EL2N and GraNd scores for a classifier-head snapshot, and their seed average.

GraNd is the L2 norm of the cross-entropy gradient with respect to the
final layer (weights and bias). For that layer the gradient is the outer
product ``(p - y) h^T`` plus the bias part ``p - y``, so its norm factors as
``||p - y|| * sqrt(||h||^2 + 1)`` with ``h`` the final-layer input.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset
from .errors import DataError, UsageError
from .features import FeatureVector
from .model import ClassifierParams, Snapshot, forward_batch, head_inputs, softmax

EL2N = "EL2N"
GRAND = "GraNd"
METRICS = (EL2N, GRAND)


def normalize_metric(name: str) -> str:
    for m in METRICS:
        if name.lower() == m.lower():
            return m
    raise UsageError(f"unknown metric {name!r}; expected one of {', '.join(METRICS)}")


@dataclass
class ScoreTable:
    metric: str
    step: int
    seed_scores: dict
    mean: np.ndarray

    @property
    def seeds(self) -> list[int]:
        return sorted(self.seed_scores)

    def __len__(self):
        return self.mean.size

    def save(self, path):
        seeds = self.seeds
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\t".join(["id"] + [f"score_seed_{s}" for s in seeds] + ["mean"]) + "\n")
            cols = [self.seed_scores[s] for s in seeds] + [self.mean]
            for i in range(self.mean.size):
                fh.write("\t".join([str(i)] + [f"{c[i]:.9g}" for c in cols]) + "\n")

    @classmethod
    def load(cls, path, metric: str = EL2N, step: int = -1) -> "ScoreTable":
        """Read a score TSV. The stored ``mean`` column is kept as written."""
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if not header or header[0] != "id" or header[-1] != "mean":
                raise DataError(f"{path}: expected header 'id ... mean'")
            try:
                seeds = [int(h.removeprefix("score_seed_")) for h in header[1:-1]]
            except ValueError:
                raise DataError(f"{path}: bad seed column in header") from None
            rows = []
            for lineno, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != len(header):
                    raise DataError(f"{path}:{lineno}: expected {len(header)} columns")
                if int(parts[0]) != len(rows):
                    raise DataError(f"{path}:{lineno}: ids must run 0..N-1 in order")
                rows.append([float(v) for v in parts[1:]])
        data = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
        return cls(
            metric,
            step,
            {s: data[:, j].copy() for j, s in enumerate(seeds)},
            data[:, -1].copy(),
        )


def _onehot(y: int, k: int) -> np.ndarray:
    e = np.zeros(k)
    e[y] = 1.0
    return e


def _row_norms(M: np.ndarray) -> np.ndarray:
    """Euclidean row norms, scaled by the row max so tiny entries do not underflow to 0."""
    scale = np.abs(M).max(axis=1)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sqrt(((M / safe[:, None]) ** 2).sum(axis=1))


def el2n(p, y: int) -> float:
    p = np.asarray(p, dtype=float)
    return math.hypot(*(p - _onehot(y, p.size)))


def grand_closed(p, y: int, h, expected_dim: int | None = None) -> float:
    """Final-layer gradient norm from the error vector and the final-layer input ``h``."""
    if isinstance(h, FeatureVector):
        dim, hsq = h.dim, h.norm() ** 2
    else:
        h = np.asarray(h, dtype=float)
        dim, hsq = h.size, float(np.dot(h, h))
    if expected_dim is not None and dim != expected_dim:
        raise DataError(f"h has dimension {dim}, expected {expected_dim}")
    return el2n(p, y) * math.sqrt(hsq + 1.0)


def logit_jacobian(params: ClassifierParams, x: FeatureVector) -> np.ndarray:
    """Gradient of every logit with respect to the final-layer parameters.

    Returns shape ``(K, K, F + 1)``: entry ``[k]`` is the gradient of logit
    ``k`` laid out as one ``(F + 1)`` block (weights row then bias) per
    output class.
    """
    K, F = params.W.shape
    h = _head_input(params, x)
    psi = np.zeros((K, K, F + 1))
    for k in range(K):
        psi[k, k, :F] = h
        psi[k, k, F] = 1.0
    return psi


def _head_input(params: ClassifierParams, x: FeatureVector) -> np.ndarray:
    if x.dim != params.input_dim:
        raise DataError(f"feature dim {x.dim} does not match model input dim {params.input_dim}")
    return np.asarray(head_inputs(params, x.dense()[None, :]))[0]


def grand_exact(params: ClassifierParams, x: FeatureVector, y: int) -> float:
    """Assemble the gradient as ``sum_k (p_k - y_k) psi_k`` and take its norm."""
    h = _head_input(params, x)
    p = softmax(params.W @ h + params.b)
    psi = logit_jacobian(params, x)
    err = p - _onehot(y, p.size)
    g = np.tensordot(err, psi, axes=(0, 0))
    return float(np.linalg.norm(g))


def score_matrix(params: ClassifierParams, X, labels: np.ndarray, metric: str) -> np.ndarray:
    """Scores for each row of a feature matrix, in row order."""
    metric = normalize_metric(metric)
    H = head_inputs(params, X)
    _, p = forward_batch(params, X)
    err = p.copy()
    err[np.arange(len(labels)), labels] -= 1.0
    scores = _row_norms(err)
    if metric == GRAND:
        hsq = np.asarray(H.multiply(H).sum(axis=1)).ravel() if sp.issparse(H) else (H * H).sum(axis=1)
        scores = scores * np.sqrt(hsq + 1.0)
    return scores


def score_dataset(snapshot: Snapshot, d: Dataset, featurizer, metric: str, X=None) -> np.ndarray:
    """Score every example under a frozen snapshot; result is indexed by example id."""
    if not d.has_dense_ids():
        raise DataError("score vectors are dense in id: dataset ids must be 0..N-1 in order")
    if X is None:
        X = featurizer.transform(d)
    if X.shape[1] != snapshot.params.input_dim:
        raise DataError(f"feature dim {X.shape[1]} does not match snapshot input dim {snapshot.params.input_dim}")
    return score_matrix(snapshot.params, X, d.labels, metric)


def aggregate_seeds(tables, step: int, metric: str) -> ScoreTable:
    """Average per-seed score vectors.

    ``tables`` is a mapping seed -> vector, or a sequence of vectors (seeds
    are then numbered by position).
    """
    if not isinstance(tables, dict):
        tables = dict(enumerate(tables))
    if not tables:
        raise UsageError("aggregate_seeds needs at least one score vector")
    vecs = {s: np.asarray(v, dtype=float) for s, v in tables.items()}
    sizes = {v.shape for v in vecs.values()}
    if len(sizes) != 1 or len(next(iter(sizes))) != 1:
        raise DataError(f"score vectors differ in length: {sorted(sizes)}")
    stacked = np.vstack([vecs[s] for s in sorted(vecs)])
    mean = stacked.sum(axis=0) / stacked.shape[0]
    return ScoreTable(normalize_metric(metric), int(step), vecs, mean)


def write_probability_dump(path, rows, num_classes: int, with_hnorm: bool = False):
    """Write rows of ``(id, seed, step, p[, hnorm])`` in the dump TSV format."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#k\t{num_classes}\n")
        for row in rows:
            ex_id, seed, step, p = row[:4]
            fields = [str(ex_id), str(seed), str(step)] + [repr(float(v)) for v in p]
            if with_hnorm:
                fields.append(repr(float(row[4])))
            fh.write("\t".join(fields) + "\n")


def export_probabilities(snapshots, d: Dataset, featurizer, path, with_hnorm: bool = True, X=None):
    if X is None:
        X = featurizer.transform(d)
    rows = []
    for snap in snapshots:
        H = head_inputs(snap.params, X)
        _, P = forward_batch(snap.params, X)
        hn = np.sqrt(np.asarray(H.multiply(H).sum(axis=1)).ravel() if sp.issparse(H) else (H * H).sum(axis=1))
        for i, ex in enumerate(d):
            rows.append((ex.id, snap.seed, snap.step, P[i], hn[i]))
    write_probability_dump(path, rows, d.num_classes, with_hnorm)


def ingest_probability_dump(path, d: Dataset) -> list[ScoreTable]:
    """Score tables from an external probability dump.

    One EL2N table per step; a GraNd table too when rows carry ``hnorm``.
    Every (seed, step) pair must cover every dataset id exactly once.
    """
    if not d.has_dense_ids():
        raise DataError("dataset ids must be 0..N-1 in order")
    n = len(d)
    labels = d.labels
    el2n_by = defaultdict(dict)
    grand_by = defaultdict(dict)
    seen = defaultdict(set)
    has_hnorm = None
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().rstrip("\n").split("\t")
        if len(head) != 2 or head[0] != "#k":
            raise DataError(f"{path}:1: expected '#k<TAB>K' header")
        k = int(head[1])
        if k != d.num_classes:
            raise DataError(f"{path}: dump has K={k}, dataset has K={d.num_classes}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (3 + k, 4 + k):
                raise DataError(f"{path}:{lineno}: expected {3 + k} or {4 + k} columns")
            row_has_hnorm = len(parts) == 4 + k
            if has_hnorm is None:
                has_hnorm = row_has_hnorm
            elif has_hnorm != row_has_hnorm:
                raise DataError(f"{path}:{lineno}: hnorm column present on some rows only")
            try:
                ex_id, seed, step = int(parts[0]), int(parts[1]), int(parts[2])
                p = np.array([float(v) for v in parts[3 : 3 + k]])
                hnorm = float(parts[3 + k]) if row_has_hnorm else None
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= ex_id < n:
                raise DataError(f"{path}:{lineno}: unknown id {ex_id}")
            if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-3:
                raise DataError(f"{path}:{lineno}: probabilities must be non-negative and sum to 1")
            key = (step, seed)
            if ex_id in seen[key]:
                raise DataError(f"{path}:{lineno}: duplicate row for id {ex_id}, seed {seed}, step {step}")
            seen[key].add(ex_id)
            vec = el2n_by[step].setdefault(seed, np.full(n, np.nan))
            vec[ex_id] = el2n(p, labels[ex_id])
            if hnorm is not None:
                if not math.isfinite(hnorm) or hnorm < 0:
                    raise DataError(f"{path}:{lineno}: hnorm must be finite and non-negative")
                gvec = grand_by[step].setdefault(seed, np.full(n, np.nan))
                gvec[ex_id] = vec[ex_id] * math.sqrt(hnorm * hnorm + 1.0)
    for (step, seed), ids in seen.items():
        if len(ids) != n:
            raise DataError(f"{path}: seed {seed} step {step} covers {len(ids)} of {n} examples")
    if not seen:
        raise DataError(f"{path}: no rows")
    tables = []
    for step in sorted(el2n_by):
        tables.append(aggregate_seeds(el2n_by[step], step, EL2N))
        if grand_by:
            tables.append(aggregate_seeds(grand_by[step], step, GRAND))
    return tables
