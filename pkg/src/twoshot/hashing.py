"""Stable string hashing used for split assignment and task sampling.

Python's built-in ``hash`` is salted per process, so everything that must be
reproducible across runs goes through BLAKE2b instead.
"""

from __future__ import annotations

import hashlib


def unit_hash(key: str) -> float:
    """Map a string to [0, 1) via a stable 64-bit digest."""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def short_hash(key: str, length: int = 16) -> str:
    """Short stable hex digest, used to derive deterministic identifiers."""
    return hashlib.blake2b(key.encode("utf-8"), digest_size=16).hexdigest()[:length]
