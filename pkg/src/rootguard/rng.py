"""Counter-based random streams.

Every noise draw gets its own Philox stream whose key is derived from the
tuple ``(seed, template, patient, node, draw)``.  Nothing depends on the
order in which draws happen, so sequential, threaded and re-ordered runs
produce the same bits.
"""

from __future__ import annotations

import zlib

import numpy as np

RandomStream = np.random.Generator

# Spawn-key tags that separate root streams from derived-node streams.
ROOT_TAG = 0
DERIVED_TAG = 1
AUX_TAG = 2


def name_key(name: str) -> int:
    """Stable non-negative integer for a string identifier."""
    return zlib.crc32(name.encode("utf-8"))


def _as_key(part) -> int:
    if isinstance(part, str):
        return name_key(part)
    part = int(part)
    if part < 0:
        raise ValueError(f"stream key components must be non-negative, got {part}")
    return part


def stream(seed: int, *key) -> RandomStream:
    """Return an independent generator for ``seed`` and the given key path.

    Key components may be non-negative integers or strings (hashed with CRC32).
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(_as_key(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def root_stream(seed: int, template: str, patient: int, root_index: int, draw: int) -> RandomStream:
    return stream(seed, template, patient, ROOT_TAG, root_index, draw)


def derived_stream(seed: int, template: str, patient: int, node: str, draw: int) -> RandomStream:
    return stream(seed, template, patient, DERIVED_TAG, node, draw)
