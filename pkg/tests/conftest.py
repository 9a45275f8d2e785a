import json

import numpy as np
import pytest

from grandprune.dataset import Dataset, Example
from grandprune.features import FeatureSpec, HashingFeaturizer


def make_dataset(labels, texts=None, names=None):
    k = max(max(labels) + 1, 2)
    names = names or [f"c{i}" for i in range(k)]
    texts = texts or [f"text {i}" for i in range(len(labels))]
    return Dataset(tuple(Example(i, t, int(y)) for i, (t, y) in enumerate(zip(texts, labels))), tuple(names))


def separable_dataset(n=200, seed=0):
    """Two classes, disjoint keyword vocabularies, no shared tokens."""
    rng = np.random.default_rng(seed)
    vocab = [[f"red{i}" for i in range(10)], [f"blue{i}" for i in range(10)]]
    labels = np.arange(n) % 2
    texts = [" ".join(rng.choice(vocab[y], size=4)) for y in labels]
    return make_dataset(labels.tolist(), texts, ["red", "blue"])


@pytest.fixture
def small_featurizer():
    return HashingFeaturizer(FeatureSpec(dim=2**10))


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(records, name="data.jsonl"):
        path = tmp_path / name
        path.write_text("".join(json.dumps(r) + "\n" for r in records))
        return path

    return _write


ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} -- {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
