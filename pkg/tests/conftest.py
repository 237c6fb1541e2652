import json

import numpy as np
import pytest

from glitter.data import Dataset, Example
from glitter.model import build_vocab, init_model


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    return path


@pytest.fixture
def tiny_text_ds():
    exs = (
        Example("a", "the movie was good", 1),
        Example("b", "the movie was bad", 0),
        Example("c", "a great story and a happy end", 1),
        Example("d", "an awful and boring book", 0),
    )
    return Dataset(exs, 2)


@pytest.fixture
def tiny_feat_ds():
    rng = np.random.default_rng(3)
    exs = tuple(Example(f"x{i}", tuple(rng.standard_normal(4).tolist()), int(i % 3)) for i in range(12))
    return Dataset(exs, 3)


def random_mlp(seed, input_dim=4, hidden=(5,), C=3):
    return init_model("mlp", {"input_dim": input_dim, "hidden": list(hidden), "C": C}, seed)


def random_boe(seed, words=20, d=6, hidden=(4,), C=3):
    vocab = build_vocab([" ".join(f"w{i}" for i in range(words))])
    return init_model("boe", {"V": len(vocab) + 1, "d": d, "hidden": list(hidden), "C": C}, seed, vocab)
