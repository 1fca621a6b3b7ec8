"""Deterministic random-stream management.

Every stochastic step in this package draws from an explicitly seeded
stream; nothing touches numpy's global RNG.  A stream is addressed by a
(seed, counter) pair, and experiment-level stream seeds are derived from
the master seed with pure 64-bit integer arithmetic so results reproduce
across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    # SplitMix64 finalizer; bijective on 64-bit integers.
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def derive_stream_seed(master_seed: int, stream_index: int) -> int:
    """Seed for stream ``stream_index`` of an experiment.

    For a fixed master seed the map is a bijection in the stream index,
    so derived seeds are pairwise distinct across the full 64-bit range.
    """
    if stream_index < 0:
        raise ValueError("stream_index must be non-negative")
    return _mix64((master_seed + (stream_index + 1) * _GOLDEN_GAMMA) & _MASK64)


@dataclass(frozen=True)
class RngState:
    """Handle for one deterministic draw stream.

    Equal (seed, counter) pairs always materialize generators that
    produce identical draw sequences.
    """

    seed: int
    counter: int = 0

    def at(self, counter: int) -> "RngState":
        """Same seed, different sub-stream."""
        if counter < 0:
            raise ValueError("counter must be non-negative")
        return RngState(self.seed, counter)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence((self.seed & _MASK64, self.counter))
        return np.random.Generator(np.random.PCG64(seq))
