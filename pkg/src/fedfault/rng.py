"""Named, isolated random substreams derived from one master seed.

A substream is keyed by ``(name, index)``, e.g. ``("upload", 2)`` for client 2's
upload-fault draws. Keys map to ``SeedSequence.spawn_key`` values, so changing
how one stream is consumed never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAM_NAMES = (
    "data",
    "init",
    "shuffle",
    "selection",
    "participation",
    "upload",
    "download",
    "labels",
)


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream_seed(master_seed: int, name: str, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(stream_key(name), int(index)))


def substream(master_seed: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream_seed(master_seed, name, index)))


def substream_fingerprint(master_seed: int, name: str, index: int = 0) -> int:
    """First 64-bit state word of a substream; written to run metadata."""
    return int(substream_seed(master_seed, name, index).generate_state(1, np.uint64)[0])


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
