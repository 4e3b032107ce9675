"""
Deterministic random streams

Every randomized stage draws from ``make_rng(seed, tag)``. The tag is hashed
into the SeedSequence spawn key, so streams with different tags are
independent and no stage depends on the order others consume randomness.
"""

import hashlib

import numpy as np

from core.errors import ValidationError

_U64 = 2 ** 64


def _tag_words(stream_tag: str) -> tuple:
    digest = hashlib.sha256(stream_tag.encode('utf-8')).digest()
    return tuple(int.from_bytes(digest[i:i + 4], 'little') for i in range(0, len(digest), 4))


def make_rng(seed: int, stream_tag: str) -> np.random.Generator:
    """
    Random stream for (seed, tag).

    Args:
        seed: 64-bit integer (negative values wrap modulo 2**64)
        stream_tag: Nonempty stage name, e.g. "occ:<sample_id>"

    Returns:
        numpy Generator; identical (seed, tag) pairs give identical streams
    """
    if not stream_tag:
        raise ValidationError("stream_tag must be nonempty")
    if not -(2 ** 63) <= seed < _U64:
        raise ValidationError(f"seed {seed} does not fit in 64 bits")
    seq = np.random.SeedSequence(entropy=seed % _U64, spawn_key=_tag_words(stream_tag))
    return np.random.Generator(np.random.PCG64(seq))


def torch_seed(seed: int, stream_tag: str) -> int:
    """Derive a torch manual seed from a tagged stream."""
    return int(make_rng(seed, stream_tag).integers(0, 2 ** 63 - 1))

