import math

import mpmath
import numpy as np
import pytest
import scipy.sparse as sp

from grandprune.dataset import split
from grandprune.errors import DataError, NumericError, UsageError
from grandprune.features import FeatureSpec, FeatureVector, HashingFeaturizer
from grandprune.model import (
    ClassifierParams,
    Snapshot,
    TrainConfig,
    evaluate,
    forward,
    forward_batch,
    init,
    load_snapshot,
    loss_and_grads,
    loss_ce,
    save_snapshot,
    train,
)

from conftest import make_dataset, separable_dataset


def test_init_deterministic_and_zero_bias():
    a, b = init(3, 50, 0, seed=4), init(3, 50, 0, seed=4)
    np.testing.assert_array_equal(a.W, b.W)
    assert np.all(a.b == 0)
    h = init(3, 50, 8, seed=4)
    assert h.W.shape == (3, 8) and h.W1.shape == (8, 50)
    assert np.all(h.b1 == 0)
    assert np.abs(h.W1).max() <= 1 / math.sqrt(50)
    assert np.abs(h.W).max() <= 1 / math.sqrt(8)


def test_init_mean_statistical():
    D = 50_000
    p = init(2, D, 0, seed=11)
    draws = p.W.ravel()
    se = (1 / math.sqrt(D)) / math.sqrt(3) / math.sqrt(draws.size)
    assert abs(draws.mean()) < 3 * se


def test_init_rejects_bad_shapes():
    with pytest.raises(UsageError):
        init(1, 4)


def test_forward_uniform_at_zero():
    params = ClassifierParams(np.zeros((4, 8)), np.zeros(4))
    _, p = forward(params, FeatureVector.from_dense(np.arange(8.0)))
    np.testing.assert_allclose(p, 0.25, rtol=0, atol=1e-15)


def test_forward_extreme_logits_stable():
    params = ClassifierParams(np.zeros((2, 3)), np.array([1000.0, 0.0]))
    logits, p = forward(params, FeatureVector.from_dense([1.0, 0, 0]))
    assert not np.any(np.isnan(p))
    assert p[0] == 1.0
    assert 0.0 < p[1] <= 1e-300


def test_forward_rejects_bad_input():
    params = ClassifierParams(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(DataError):
        forward(params, FeatureVector.from_dense([1.0, 2.0]))
    with pytest.raises(DataError):
        forward(params, FeatureVector(np.array([0]), np.array([np.inf]), 3))


def test_softmax_sums_to_one_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k, d = rng.integers(2, 8), rng.integers(1, 20)
        params = ClassifierParams(rng.normal(scale=10, size=(k, d)), rng.normal(scale=10, size=k))
        _, p = forward_batch(params, rng.normal(size=(5, d)))
        assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-12)
        assert np.all(p > 0)


def test_loss_ce_values():
    assert loss_ce(np.array([0.0, 1.0]), 1) == 0.0
    assert loss_ce(np.array([0.5, 0.5]), 0) == pytest.approx(math.log(2), abs=1e-15)
    assert loss_ce(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-300))


def test_loss_ce_matches_high_precision():
    rng = np.random.default_rng(3)
    mpmath.mp.dps = 50
    for _ in range(20):
        logits = rng.normal(scale=5, size=4)
        y = int(rng.integers(4))
        exps = [mpmath.exp(mpmath.mpf(float(v))) for v in logits]
        expected = -mpmath.log(exps[y] / mpmath.fsum(exps))
        params = ClassifierParams(np.zeros((4, 1)), logits)
        _, p = forward(params, FeatureVector.from_dense([0.0]))
        assert loss_ce(p, y) == pytest.approx(float(expected), rel=1e-12)


@pytest.mark.parametrize("hidden", [0, 4])
def test_gradient_matches_finite_differences(hidden):
    """Central differences, step 1e-5, vector relative error below 1e-4, 50 cases."""
    rng = np.random.default_rng(100 + hidden)
    eps = 1e-5
    for _ in range(50):
        K, D, B = int(rng.integers(2, 5)), int(rng.integers(2, 7)), int(rng.integers(1, 6))
        params = init(K, D, hidden, seed=int(rng.integers(1 << 30)))
        params.W = rng.normal(size=params.W.shape)
        params.b = rng.normal(size=K)
        if hidden:
            params.b1 = rng.normal(scale=0.1, size=hidden)
        X = rng.normal(size=(B, D))
        y = rng.integers(K, size=B)
        _, grads = loss_and_grads(params, X, y)
        for arr, g in zip(params.arrays(), grads):
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                lp, _ = loss_and_grads(params, X, y)
                arr[idx] = old - eps
                lm, _ = loss_and_grads(params, X, y)
                arr[idx] = old
                fd[idx] = (lp - lm) / (2 * eps)
            denom = max(np.linalg.norm(fd), 1e-8)
            assert np.linalg.norm(fd - g) / denom < 1e-4


def test_sparse_and_dense_gradients_agree():
    rng = np.random.default_rng(8)
    X = sp.random(6, 30, density=0.2, random_state=1, format="csr")
    params = init(3, 30, 0, seed=2)
    y = rng.integers(3, size=6)
    ls, gs = loss_and_grads(params, X, y)
    ld, gd = loss_and_grads(params, X.toarray(), y)
    assert ls == pytest.approx(ld, rel=1e-14)
    for a, b in zip(gs, gd):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_zero_final_layer_loss_is_log_k():
    for K in (2, 3, 7):
        params = ClassifierParams(np.zeros((K, 5)), np.zeros(K))
        loss, _ = loss_and_grads(params, np.ones((4, 5)), np.arange(4) % K)
        assert loss == pytest.approx(math.log(K), abs=1e-14)


def test_step_zero_snapshot_equals_init(small_featurizer):
    d = separable_dataset(64)
    res = train(d, small_featurizer, TrainConfig(seed=5, checkpoint_steps=(0,)))
    p0 = init(2, small_featurizer.dim, 0, seed=5)
    assert res.snapshots[0].step == 0
    np.testing.assert_array_equal(res.snapshots[0].params.W, p0.W)
    np.testing.assert_array_equal(res.snapshots[0].params.b, p0.b)


def test_separable_one_epoch_fits(small_featurizer):
    d = separable_dataset(400)
    res = train(d, small_featurizer, TrainConfig(seed=1))
    assert evaluate(res.final, d, small_featurizer) >= 0.95


def test_separable_held_out(small_featurizer):
    tr, ev = split(separable_dataset(400, seed=2), 0.25, seed=0)
    res = train(tr, small_featurizer, TrainConfig(seed=3, epochs=2))
    assert evaluate(res.final, ev, small_featurizer) >= 0.9


@pytest.mark.parametrize("hidden", [0, 6])
def test_training_is_deterministic(small_featurizer, hidden):
    d = separable_dataset(100)
    cfg = TrainConfig(seed=9, epochs=2, checkpoint_steps=(0, 2, 4, 8), hidden_dim=hidden)
    a, b = train(d, small_featurizer, cfg), train(d, small_featurizer, cfg)
    assert [s.step for s in a.snapshots] == [0, 2, 4, 8]
    for sa, sb in zip(a.snapshots, b.snapshots):
        assert sa.params.tobytes() == sb.params.tobytes()


def test_stop_at_last_checkpoint(small_featurizer):
    d = separable_dataset(100)
    cfg = TrainConfig(seed=1, epochs=3, checkpoint_steps=(3,))
    early = train(d, small_featurizer, cfg, stop_at_last_checkpoint=True)
    full = train(d, small_featurizer, cfg)
    assert len(early.losses) == 3
    assert early.at(3).params.tobytes() == full.at(3).params.tobytes()


def test_checkpoint_beyond_total_steps(small_featurizer):
    with pytest.raises(UsageError):
        train(separable_dataset(64), small_featurizer, TrainConfig(checkpoint_steps=(3,), batch_size=32))


def test_divergence_raises_with_step(small_featurizer):
    d = make_dataset([0, 1] * 40, [f"w{i % 7} v{i % 3}" for i in range(80)])
    with pytest.raises(NumericError, match="step"):
        train(d, small_featurizer, TrainConfig(learning_rate=1e4, epochs=3, batch_size=4))


def test_evaluate_constant_predictor():
    d = make_dataset([0, 0, 0], names=["a", "b"])
    fz = HashingFeaturizer(FeatureSpec(dim=16))
    params = ClassifierParams(np.zeros((2, 16)), np.array([1.0, 0.0]))
    assert evaluate(params, d, fz) == 1.0


def test_evaluate_tie_goes_to_lower_class():
    d = make_dataset([0, 1], names=["a", "b"])
    fz = HashingFeaturizer(FeatureSpec(dim=16))
    params = ClassifierParams(np.zeros((2, 16)), np.zeros(2))
    assert evaluate(params, d, fz) == 0.5


def test_random_init_accuracy_near_chance(small_featurizer):
    d = separable_dataset(200, seed=4)
    X = small_featurizer.transform(d)
    accs = [evaluate(init(2, small_featurizer.dim, 0, seed=s), d, small_featurizer, X=X) for s in range(20)]
    assert abs(np.mean(accs) - 0.5) <= 0.1


@pytest.mark.parametrize("hidden", [0, 3])
def test_snapshot_roundtrip(tmp_path, hidden):
    params = init(3, 12, hidden, seed=1)
    params.b = np.array([0.1, -2.5, 1e-300])
    snap = Snapshot(params, step=17, seed=42)
    save_snapshot(snap, tmp_path / "s.bin")
    back = load_snapshot(tmp_path / "s.bin")
    assert (back.step, back.seed) == (17, 42)
    assert back.params.tobytes() == params.tobytes()
    assert back.params.hidden_dim == hidden


def test_snapshot_bad_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a snapshot")
    with pytest.raises(DataError):
        load_snapshot(tmp_path / "x.bin")
