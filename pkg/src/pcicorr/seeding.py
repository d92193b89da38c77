"""Seed splitting so each component draws from its own stream.

A component stream is ``SeedSequence([seed, h])`` where ``h`` is the first
8 bytes of ``sha256(name)`` read big-endian. Adding a new component name
never perturbs the streams of existing ones.
"""

import hashlib

import numpy as np


def component_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


def component_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), component_key(name)]))
