"""Derived seeds.

A run has one master seed. Every consumer derives its own 32-bit seed from
``(master, *keys)`` through ``numpy.random.SeedSequence``, where keys are
small non-negative integers (stage number, trait index, fold index, ...).
Strings are mapped to integers via a stable CRC32, never ``hash()``.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def derive_seed(seed: int, *keys) -> int:
    ss = np.random.SeedSequence([int(seed)] + [_key(k) for k in keys])
    return int(ss.generate_state(1)[0])
