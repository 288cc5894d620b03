"""Seed derivation: one root seed controls every random stream."""

import hashlib

import numpy as np


def derive_seed(root: int, *names) -> int:
    """Hash ``root`` together with component names into a 63-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for n in names:
        h.update(b"\x1f")
        h.update(str(n).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
