"""Classifier head over fixed features: linear softmax with an optional ReLU hidden layer.

Trained with mini-batch SGD + momentum on mean cross-entropy. Each epoch
reshuffles with ``default_rng(mix(seed, epoch))`` (see ``_util.mix``), and
parameter snapshots are taken at requested optimizer steps, step 0 being
the initial parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
from pathlib import Path
import struct

import numpy as np
import scipy.sparse as sp

from ._util import mix
from .dataset import Dataset
from .errors import DataError, NumericError, UsageError
from .features import FeatureVector

PROB_FLOOR = 1e-300
DIVERGENCE_LOSS = 50.0
SNAPSHOT_MAGIC = b"GPSNAP\x00\x01"


@dataclass
class ClassifierParams:
    W: np.ndarray
    b: np.ndarray
    W1: np.ndarray | None = None
    b1: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1] if self.W1 is not None else self.W.shape[1]

    @property
    def hidden_dim(self) -> int:
        return 0 if self.W1 is None else self.W1.shape[0]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.W.copy(),
            self.b.copy(),
            None if self.W1 is None else self.W1.copy(),
            None if self.b1 is None else self.b1.copy(),
        )

    def arrays(self) -> list[np.ndarray]:
        out = [self.W, self.b]
        if self.W1 is not None:
            out += [self.W1, self.b1]
        return out

    def tobytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.arrays())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    batch_size: int = 32
    epochs: int = 1
    checkpoint_steps: tuple[int, ...] = ()
    seed: int = 0
    momentum: float = 0.9
    hidden_dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "checkpoint_steps", tuple(sorted(set(int(s) for s in self.checkpoint_steps))))
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise UsageError("batch_size and epochs must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise UsageError("momentum must be in [0, 1)")
        if self.hidden_dim < 0:
            raise UsageError("hidden_dim must be 0 or positive")
        if any(s < 0 for s in self.checkpoint_steps):
            raise UsageError("checkpoint steps must be non-negative")

    def steps_per_epoch(self, n: int) -> int:
        return math.ceil(n / self.batch_size)

    def total_steps(self, n: int) -> int:
        return self.epochs * self.steps_per_epoch(n)


@dataclass
class Snapshot:
    params: ClassifierParams
    step: int
    seed: int


@dataclass
class TrainResult:
    snapshots: list[Snapshot]
    final: ClassifierParams
    losses: list[float] = field(default_factory=list)

    def at(self, step: int) -> Snapshot:
        for snap in self.snapshots:
            if snap.step == step:
                return snap
        raise KeyError(step)


def init(K: int, D: int, D_h: int = 0, seed: int = 0) -> ClassifierParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if K < 2 or D < 1 or D_h < 0:
        raise UsageError(f"bad shapes K={K} D={D} D_h={D_h}")
    rng = np.random.default_rng(seed)
    if D_h:
        W1 = rng.uniform(-1.0, 1.0, size=(D_h, D)) / math.sqrt(D)
        W = rng.uniform(-1.0, 1.0, size=(K, D_h)) / math.sqrt(D_h)
        return ClassifierParams(W, np.zeros(K), W1, np.zeros(D_h))
    W = rng.uniform(-1.0, 1.0, size=(K, D)) / math.sqrt(D)
    return ClassifierParams(W, np.zeros(K))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; entries floored at the smallest normal float."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.maximum(p, np.finfo(float).tiny)


def head_inputs(params: ClassifierParams, X):
    """Final-layer input for each row of X (the raw features, or the hidden activations)."""
    if params.W1 is None:
        return X
    return np.maximum(_matmul(X, params.W1.T) + params.b1, 0.0)


def forward_batch(params: ClassifierParams, X) -> tuple[np.ndarray, np.ndarray]:
    H = head_inputs(params, X)
    logits = _matmul(H, params.W.T) + params.b
    return logits, softmax(logits)


def forward(params: ClassifierParams, x: FeatureVector) -> tuple[np.ndarray, np.ndarray]:
    if x.dim != params.input_dim:
        raise DataError(f"feature dim {x.dim} does not match model input dim {params.input_dim}")
    if not np.all(np.isfinite(x.weights)):
        raise DataError("non-finite feature values")
    X = sp.csr_matrix((x.weights, x.indices, [0, x.indices.size]), shape=(1, x.dim))
    logits, p = forward_batch(params, X)
    return logits[0], p[0]


def loss_ce(p: np.ndarray, y: int) -> float:
    return -math.log(max(float(p[y]), PROB_FLOOR))


def _matmul(X, M: np.ndarray) -> np.ndarray:
    out = X @ M
    return np.asarray(out)


def loss_and_grads(params: ClassifierParams, X, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient, ordered like ``params.arrays()``."""
    n = X.shape[0]
    if params.W1 is not None:
        Z1 = _matmul(X, params.W1.T) + params.b1
        H = np.maximum(Z1, 0.0)
    else:
        H = X
    logits = _matmul(H, params.W.T) + params.b
    p = softmax(logits)
    rows = np.arange(n)
    loss = float(-np.log(np.maximum(p[rows, y], PROB_FLOOR)).mean())
    G = p.copy()
    G[rows, y] -= 1.0
    G /= n
    gW = _matmul(H.T, G).T if sp.issparse(H) else G.T @ H
    grads = [np.ascontiguousarray(gW), G.sum(axis=0)]
    if params.W1 is not None:
        dZ1 = (G @ params.W) * (Z1 > 0)
        gW1 = _matmul(X.T, dZ1).T if sp.issparse(X) else dZ1.T @ X
        grads += [np.ascontiguousarray(gW1), dZ1.sum(axis=0)]
    return loss, grads


def train(
    train_set: Dataset,
    featurizer,
    cfg: TrainConfig,
    X=None,
    stop_at_last_checkpoint: bool = False,
) -> TrainResult:
    """Run SGD with momentum (``v = mu*v + g; theta -= lr*v``).

    ``X`` may carry precomputed features (rows in dataset order). With
    ``stop_at_last_checkpoint`` the run ends as soon as the largest
    checkpoint step has been captured.
    """
    n = len(train_set)
    total = cfg.total_steps(n)
    if cfg.checkpoint_steps and cfg.checkpoint_steps[-1] > total:
        raise UsageError(f"checkpoint step {cfg.checkpoint_steps[-1]} beyond total steps {total}")
    if X is None:
        X = featurizer.transform(train_set)
    if sp.issparse(X):
        X = X.tocsr()
    y = train_set.labels
    params = init(train_set.num_classes, X.shape[1], cfg.hidden_dim, cfg.seed)
    velocity = [np.zeros_like(a) for a in params.arrays()]
    wanted = set(cfg.checkpoint_steps)
    last = cfg.checkpoint_steps[-1] if cfg.checkpoint_steps else None
    snapshots = []
    losses = []

    step = 0
    if 0 in wanted:
        snapshots.append(Snapshot(params.copy(), 0, cfg.seed))
    if stop_at_last_checkpoint and last == 0:
        return TrainResult(snapshots, params, losses)
    per_epoch = cfg.steps_per_epoch(n)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(mix(cfg.seed, epoch)).permutation(n)
        for start in range(0, per_epoch * cfg.batch_size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(params, X[batch], y[batch])
            step += 1
            if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise NumericError(f"training diverged at step {step} (loss={loss})")
            losses.append(loss)
            for theta, v, g in zip(params.arrays(), velocity, grads):
                v *= cfg.momentum
                v += g
                theta -= cfg.learning_rate * v
            if step in wanted:
                snapshots.append(Snapshot(params.copy(), step, cfg.seed))
                if stop_at_last_checkpoint and step == last:
                    return TrainResult(snapshots, params, losses)
    return TrainResult(snapshots, params, losses)


def predict(params: ClassifierParams, X) -> np.ndarray:
    _, p = forward_batch(params, X)
    return p.argmax(axis=1)


def evaluate(params: ClassifierParams, d: Dataset, featurizer, X=None) -> float:
    """Accuracy of argmax predictions; ties go to the lower class index."""
    if len(d) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if X is None:
        X = featurizer.transform(d)
    return float(np.mean(predict(params, X) == d.labels))


def save_snapshot(snap: Snapshot, path):
    """Binary layout: magic, uint32 LE header length, JSON header, float64 LE arrays.

    Arrays follow in the order W (K x F, row-major), b (K), then W1 (D_h x D)
    and b1 (D_h) when a hidden layer is present.
    """
    p = snap.params
    header = json.dumps(
        {"version": 1, "K": p.num_classes, "D": p.input_dim, "D_h": p.hidden_dim, "step": snap.step, "seed": snap.seed},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(p.tobytes())


def load_snapshot(path) -> Snapshot:
    raw = Path(path).read_bytes()
    if raw[:8] != SNAPSHOT_MAGIC:
        raise DataError(f"{path}: not a snapshot file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    if header.get("version") != 1:
        raise DataError(f"{path}: unsupported snapshot version {header.get('version')}")
    K, D, D_h = header["K"], header["D"], header["D_h"]
    shapes = [(K, D_h or D), (K,)]
    if D_h:
        shapes += [(D_h, D), (D_h,)]
    offset = 12 + hlen
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(float).reshape(shape)
        offset += 8 * count
        arrays.append(arr)
    if offset != len(raw):
        raise DataError(f"{path}: size does not match header")
    params = ClassifierParams(*arrays) if D_h else ClassifierParams(arrays[0], arrays[1])
    return Snapshot(params, int(header["step"]), int(header["seed"]))
