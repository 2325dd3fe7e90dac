"""Deterministic seed derivation: one root seed, split per stage by fixed labels."""

from __future__ import annotations

import hashlib

import numpy as np


def split_seed(root: int, *labels: object) -> int:
    """Derive a child seed from `root` and a label path.

    Stable across runs and platforms (SHA-256 of the textual path), so every
    pipeline stage can be re-run independently yet reproducibly.
    """
    text = ":".join([str(int(root))] + [str(lab) for lab in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(root: int, *labels: object) -> np.random.Generator:
    """Seeded generator for the given label path."""
    return np.random.default_rng(split_seed(root, *labels))
