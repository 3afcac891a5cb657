"""Seeded, platform-stable randomness.

All stochastic behavior in the package (weight init, quantization noise,
shuffling, corpus sampling, synthetic data) flows through RngState so that
a single 64-bit seed fully determines every run.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngState:
    """Deterministic random stream (PCG64) with named substream derivation."""

    algorithm = "pcg64"

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.draws = 0

    def spawn(self, key):
        """Derive an independent stream from this seed and a label.

        Uses sha256 so the derivation is stable across platforms and
        python versions (unlike hash()).
        """
        digest = hashlib.sha256(f"{self.seed}:{key}".encode()).digest()
        return RngState(int.from_bytes(digest[:8], "little"))

    def uniform(self, low, high, size=None):
        self.draws += 1
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.draws += 1
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high, size=None):
        self.draws += 1
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        self.draws += 1
        return self._gen.permutation(n)

    def choice(self, n, size, replace=True):
        self.draws += 1
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"RngState(seed={self.seed}, algorithm={self.algorithm}, draws={self.draws})"
