"""Two-state Markov (Gilbert-Elliott) erasure channel with acknowledgments.

State ``gamma = 1`` means the packet got through, ``0`` means it was lost.
From a success the next packet is lost with probability ``p``; from a loss
it recovers with probability ``q``. The chain starts in ``gamma_0 = 1``.
"""
from __future__ import annotations

import csv
import math
from typing import IO, Optional

import numpy as np

_BLOCK = 4096


def make_rng(seed) -> np.random.Generator:
    """Counter-based 64-bit generator used everywhere randomness is needed."""
    return np.random.Generator(np.random.Philox(seed))


def _check_probs(p: float, q: float):
    # p = 0 (lossless) and q = 1 (one-step recovery) are accepted degenerate cases
    if not 0.0 <= p < 1.0:
        raise ValueError(f"failure probability p must lie in [0, 1), got {p!r}")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"recovery probability q must lie in (0, 1], got {q!r}")


class GilbertElliott:
    """Stateful channel instance; one owner, advanced by :meth:`step`.

    Uniforms are drawn in blocks, so a run is a pure function of the seed
    and the number of steps taken.
    """

    def __init__(self, p: float, q: float, seed=None, state: int = 1):
        _check_probs(p, q)
        if state not in (0, 1):
            raise ValueError("state must be 0 or 1")
        self.p = float(p)
        self.q = float(q)
        self.seed = seed
        self.state = state
        self._rng = make_rng(seed)
        self._buf = np.empty(0)
        self._pos = 0

    def __repr__(self):
        return f"GilbertElliott(p={self.p}, q={self.q}, seed={self.seed!r}, state={self.state})"

    def _uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._rng.random(_BLOCK).tolist()
            self._pos = 0
        x = self._buf[self._pos]
        self._pos += 1
        return x

    def step(self) -> int:
        """Advance one transition and return the new state."""
        x = self._uniform()
        if self.state == 1:
            self.state = 0 if x < self.p else 1
        else:
            self.state = 1 if x < self.q else 0
        return self.state

    def run(self, length: int) -> np.ndarray:
        """The next ``length`` states."""
        out = np.empty(length, dtype=np.int8)
        for k in range(length):
            out[k] = self.step()
        return out

    def spawn(self, seed) -> "GilbertElliott":
        """Fresh channel with the same law, a new seed and ``gamma_0 = 1``."""
        return GilbertElliott(self.p, self.q, seed=seed)

    @property
    def transition_matrix(self) -> np.ndarray:
        """Rows/columns ordered (loss, success)."""
        return transition_matrix(self.p, self.q)

    def sojourn_pmf(self, i: int) -> float:
        return sojourn_pmf(self.p, self.q, i)

    def nu(self, growth: float) -> Optional[float]:
        return nu(self.p, self.q, growth)


def transition_matrix(p: float, q: float) -> np.ndarray:
    return np.array([[1 - q, q], [p, 1 - p]])


def trace(p: float, q: float, length: int, seed=None) -> np.ndarray:
    """States ``gamma_0 .. gamma_{length-1}`` of a fresh channel (``gamma_0 = 1``)."""
    if length <= 0:
        return np.empty(0, dtype=np.int8)
    ch = GilbertElliott(p, q, seed=seed)
    return np.concatenate([[1], ch.run(length - 1)]).astype(np.int8)


def sojourn_pmf(p: float, q: float, i: int) -> float:
    """Probability that consecutive arrivals are exactly ``i`` steps apart."""
    _check_probs(p, q)
    if int(i) != i or i < 1:
        raise ValueError(f"sojourn time must be an integer >= 1, got {i!r}")
    if i == 1:
        return 1 - p
    return p * q * (1 - q) ** (i - 2)


def sojourn_times(gammas) -> np.ndarray:
    """Inter-arrival times ``tau_j`` read off a state trace."""
    arrivals = np.flatnonzero(np.asarray(gammas) == 1)
    return np.diff(arrivals)


def nu(p: float, q: float, growth: float) -> Optional[float]:
    """Loss multiplier ``sqrt(E[growth ** (2 (tau - 1))])``.

    Returns ``None`` when the expectation diverges, i.e. when
    ``(1 - q) * growth**2 >= 1`` and losses occur at all.
    """
    _check_probs(p, q)
    if not growth > 1:
        raise ValueError(f"growth must exceed 1, got {growth!r}")
    if p == 0:
        return 1.0
    g2 = growth * growth
    denom = 1 - (1 - q) * g2
    if denom <= 0:
        return None
    return math.sqrt(1 + p * (g2 - 1) / denom)


def write_trace_csv(gammas, fh: IO[str]):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["k", "gamma"])
    for k, g in enumerate(gammas):
        w.writerow([k, int(g)])
