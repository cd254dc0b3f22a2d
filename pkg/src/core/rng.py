"""Seed derivation for reproducible, independent random streams."""

import hashlib

import numpy as np

SEED_MASK = 2**64 - 1


def derive_seed(master_seed: int, *labels: int | str) -> int:
    """Hash a master seed and labels into an independent 64-bit seed."""
    digest = hashlib.blake2b(digest_size=8, key=b"packing-lab")
    digest.update(int(master_seed & SEED_MASK).to_bytes(8, "little"))
    for label in labels:
        digest.update(b"\x1f")
        digest.update(str(label).encode("utf-8"))
    return int.from_bytes(digest.digest(), "little")


def make_rng(seed: int, *labels: int | str) -> np.random.Generator:
    """Build a PCG64 generator for a derived sub-stream."""
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.Generator(np.random.PCG64(seed & SEED_MASK))
