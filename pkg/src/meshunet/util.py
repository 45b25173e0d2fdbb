"""Shared helpers: derived random streams and content digests."""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(root_seed: int, label: str) -> int:
    """Derive a child seed from a root seed and a stream label.

    Stable across runs and platforms, so a single run seed can drive
    independent streams (parameter init, data generation, shuffling, ...)
    without them aliasing each other.
    """
    digest = hashlib.sha256(f"{int(root_seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def substream(root_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root_seed, label))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
