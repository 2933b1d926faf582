"""Process-independent hashing used to derive every seed in a run."""

from __future__ import annotations

import hashlib

import numpy as np

U64_MASK = (1 << 64) - 1


def stable_hash(*parts) -> int:
    """Hash ``parts`` to an unsigned 64-bit integer, identical across processes and platforms.

    Parts are rendered with ``str`` and joined by NUL, so ``("a", 1)`` and
    ``("a1",)`` hash differently.
    """
    h = hashlib.blake2b(digest_size=8)
    for i, part in enumerate(parts):
        if i:
            h.update(b"\x00")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(stable_hash(*parts))
