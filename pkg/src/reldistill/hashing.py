"""Stable hashing helpers.

Everything that needs run-to-run and cross-platform determinism (token
bucketing, per-record RNG streams, mock embeddings) goes through blake2b
rather than Python's randomized ``hash``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_digest(*parts: object) -> int:
    """64-bit digest of the string forms of ``parts``, joined by NUL."""
    payload = "\x00".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def derive_seed(*parts: object) -> int:
    """Child seed derived from arbitrary labels; independent streams per label."""
    return stable_digest(*parts)


def child_rng(*parts: object) -> np.random.Generator:
    """Deterministic numpy generator keyed by ``parts``."""
    return np.random.default_rng(derive_seed(*parts))


def token_bucket(token: str, buckets: int) -> int:
    """Hash a token into ``[0, buckets)``; stable across runs and platforms."""
    return stable_digest("tok", token) % buckets
