"""Deterministic named random streams.

Every draw in the package is keyed by ``(run_seed, stream, *tags, *key)``
through :class:`numpy.random.SeedSequence`. A draw therefore depends only on
its own coordinates (training step, batch slot, token position), never on how
many draws other streams made before it. This is what makes interleaved
samplers collapse exactly onto their single-model counterparts when one side
is configured away: both consume identical per-position randomness.

Streams are cheap value objects; there is no global RNG anywhere.
"""

from __future__ import annotations

import numpy as np

# Stable integer ids so stream names can participate in SeedSequence entropy.
_STREAM_IDS = {
    "data": 0,      # training-batch example selection
    "init": 1,      # fresh parameter initialisation
    "student": 2,   # student proposal draws
    "teacher": 3,   # teacher sampling / replacement draws
    "mix": 4,       # per-example source coin (imitkd)
    "draft": 5,     # speculative-decoding draft proposals
    "accept": 6,    # speculative-decoding acceptance coins
    "target": 7,    # speculative-decoding residual / bonus draws
    "corpus": 8,    # corpus generation
    "eval": 9,      # evaluation-side sampling (Monte-Carlo checks)
}


class RngStream:
    """A named stream rooted at a run seed plus fixed integer tags."""

    __slots__ = ("seed", "tags")

    def __init__(self, seed: int, name: str, *tags: int):
        if seed < 0:
            raise ValueError(f"run seed must be non-negative, got {seed}")
        if name not in _STREAM_IDS:
            raise ValueError(f"unknown stream name {name!r}")
        self.seed = int(seed)
        self.tags = (_STREAM_IDS[name],) + tuple(int(t) for t in tags)

    def derive(self, *tags: int) -> "RngStream":
        """Child stream with extra fixed tags appended."""
        child = object.__new__(RngStream)
        child.seed = self.seed
        child.tags = self.tags + tuple(int(t) for t in tags)
        return child

    def at(self, *key: int) -> np.random.Generator:
        """Generator for one keyed draw site."""
        entropy = (self.seed,) + self.tags + tuple(int(k) for k in key)
        return np.random.default_rng(np.random.SeedSequence(entropy))

    def uniform(self, *key: int) -> float:
        """Single U[0,1) variate at the keyed site."""
        return float(self.at(*key).random())

    def __repr__(self):
        return f"RngStream(seed={self.seed}, tags={self.tags})"


def stream(seed: int, name: str, *tags: int) -> RngStream:
    return RngStream(seed, name, *tags)


def categorical(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw of an index from a probability vector.

    Consumes exactly one uniform. Zero-mass entries are never selected:
    ``searchsorted(..., side="right")`` skips cumulative-sum plateaus.
    """
    c = np.cumsum(probs)
    c[-1] = 1.0  # guard float shortfall in the final cumulative entry
    i = int(np.searchsorted(c, u, side="right"))
    i = min(i, len(probs) - 1)
    while i > 0 and probs[i] <= 0.0:
        i -= 1
    return i
