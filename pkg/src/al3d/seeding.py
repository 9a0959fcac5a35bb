"""Stable seed derivation for per-scene / per-stage generators.

Python's builtin hash is randomized per process, so derived seeds go
through blake2s to stay identical across runs, platforms and thread counts.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    h = hashlib.blake2s(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
