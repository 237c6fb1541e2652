"""Keyed random streams: independent, order-free generators per (seed, key...)."""

from __future__ import annotations

import hashlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest(), "little")
    return int(part) % 2**64


def keyed_rng(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng([_word(seed), *(_word(p) for p in parts)])
