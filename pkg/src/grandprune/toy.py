"""Synthetic two-class corpus whose classes use disjoint keyword vocabularies.

Every text mixes class keywords with shared filler words and contains at
least one keyword of its own class and none of the other, so the clean
corpus is separable in token space.
"""

from __future__ import annotations

import numpy as np

from ._util import mix
from .dataset import Dataset, Example, NoiseRecord, inject_label_noise

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]
LABEL_NAMES = ("World", "Sports")


def _words(rng, count, syllables, taken):
    out = []
    while len(out) < count:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def make_vocab(seed: int, keywords_per_class: int = 30, filler: int = 400):
    rng = np.random.default_rng(mix(seed, 0x70C))
    taken: set = set()
    classes = [_words(rng, keywords_per_class, 3, taken) for _ in LABEL_NAMES]
    return classes, _words(rng, filler, 2, taken)


def make_corpus(
    n: int,
    seed: int,
    vocab_seed: int | None = None,
    keyword_rate: float = 0.35,
    min_len: int = 4,
    max_len: int = 24,
) -> Dataset:
    """``n`` examples with ids 0..n-1 and an exactly balanced, shuffled label sequence."""
    keywords, filler = make_vocab(seed if vocab_seed is None else vocab_seed)
    rng = np.random.default_rng(mix(seed, 0x7E7))
    labels = rng.permutation(np.arange(n) % len(LABEL_NAMES))
    examples = []
    for i, y in enumerate(labels):
        length = int(rng.integers(min_len, max_len + 1))
        is_kw = rng.random(length) < keyword_rate
        is_kw[rng.integers(length)] = True
        tokens = [
            keywords[y][rng.integers(len(keywords[y]))] if kw else filler[rng.integers(len(filler))]
            for kw in is_kw
        ]
        examples.append(Example(i, " ".join(tokens), int(y)))
    return Dataset(tuple(examples), LABEL_NAMES)


def make_task(seed: int, n_train: int = 2000, n_eval: int = 1000, noise_rate: float = 0.1) -> tuple[Dataset, Dataset, NoiseRecord]:
    """Noisy training set, clean held-out set and the record of flipped labels."""
    train = make_corpus(n_train, mix(seed, 1), vocab_seed=seed)
    evals = make_corpus(n_eval, mix(seed, 2), vocab_seed=seed)
    noisy, record = inject_label_noise(train, noise_rate, mix(seed, 3))
    return noisy, evals, record
