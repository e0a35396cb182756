"""Counter-based random streams keyed by (seed, labels...).

Every stochastic operation derives its generator from a master seed plus
a structural key (iteration index, model index, tensor name, ...) via a
Philox counter-based bit generator. Streams are therefore independent of
evaluation order: adding iterations or reordering tensor traversal never
perturbs earlier draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

KeyPart = int | str


def derive_key(seed: int, *parts: KeyPart) -> int:
    """Hash (seed, parts...) into a stable 128-bit Philox key."""
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s" + len(raw).to_bytes(8, "little") + raw)
        else:
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *parts: KeyPart) -> np.random.Generator:
    """Return a generator for the counter-based stream keyed by (seed, parts...)."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *parts)))


def child_seed(seed: int, *parts: KeyPart) -> int:
    """Derive a 63-bit child seed for APIs that take an integer seed."""
    return derive_key(seed, *parts) & (2**63 - 1)
