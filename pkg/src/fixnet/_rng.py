"""Deterministic random-stream plumbing.

A single master seed fans out to independent named substreams through a
label hash, so adding a new stream never perturbs the draws of existing
ones and identical (seed, label) pairs reproduce bit-identical streams on
any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_entropy(master_seed: int, *labels) -> int:
    """128-bit entropy derived from a master seed and a label path."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


def substream(master_seed: int, *labels) -> np.random.Generator:
    """Generator for the named substream of a master seed."""
    seq = np.random.SeedSequence(substream_entropy(master_seed, *labels))
    return np.random.default_rng(seq)


class BufferedNormals:
    """Chunked standard-normal draws from one generator, in stream order."""

    CHUNK = 8192

    def __init__(self, gen: np.random.Generator):
        self._gen = gen
        self._buf = np.empty(0)
        self._pos = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            if self._pos >= self._buf.size:
                self._buf = self._gen.standard_normal(max(self.CHUNK, n))
                self._pos = 0
            m = min(n - filled, self._buf.size - self._pos)
            out[filled:filled + m] = self._buf[self._pos:self._pos + m]
            self._pos += m
            filled += m
        return out


class BufferedUniforms:
    """Chunked uniform [0,1) draws from one generator, in stream order."""

    CHUNK = 8192

    def __init__(self, gen: np.random.Generator):
        self._gen = gen
        self._buf = np.empty(0)
        self._pos = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            if self._pos >= self._buf.size:
                self._buf = self._gen.random(max(self.CHUNK, n))
                self._pos = 0
            m = min(n - filled, self._buf.size - self._pos)
            out[filled:filled + m] = self._buf[self._pos:self._pos + m]
            self._pos += m
            filled += m
        return out
