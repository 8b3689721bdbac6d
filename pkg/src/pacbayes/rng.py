"""Seeded, splittable random streams.

Every generator is numpy's Philox4x64 counter-based bit generator keyed by a
:class:`numpy.random.SeedSequence`. Streams are addressed by
``(seed, *path)`` where path entries are integers or names; names are mapped
to integers with CRC-32 so the mapping is stable across platforms and Python
hash seeds. Child streams are derived through ``SeedSequence.spawn`` which
gives disjoint keys, so results do not depend on which worker consumes which
stream.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["make_rng", "substream", "split", "stream_id"]


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream path integers must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *path) -> np.random.Generator:
    """Philox generator for the stream ``(seed, *path)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def substream(rng: np.random.Generator, *path) -> np.random.Generator:
    """Named child of an existing generator, independent of how much it was used."""
    ss = rng.bit_generator.seed_seq
    child = np.random.SeedSequence(
        ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(_key(p) for p in path)
    )
    return np.random.Generator(np.random.Philox(child))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """``n`` independent children indexed 0..n-1.

    Unlike ``Generator.spawn`` this is stateless: splitting the same generator
    twice yields the same children.
    """
    return [substream(rng, i) for i in range(n)]


def stream_id(rng: np.random.Generator) -> int:
    """A 64-bit integer identifying the stream (recorded as a trial's sample seed)."""
    return int(rng.bit_generator.seed_seq.generate_state(1, np.uint64)[0])
