"""Symmetric N-cell quantizers on [-1/2, 1/2] and their expansion rates.

A quantizer is described by its nonnegative boundary points
``h_0 = 0 < h_1 < ... < h_m = 1/2`` with ``m = ceil(N/2)``. Cells are
mirrored about the origin. For odd ``N`` the centre cell is ``[-h_1, h_1]``.

Cell indices are signed integers:

* even N: ``+j`` is ``[h_{j-1}, h_j]`` and ``-j`` its mirror, ``j = 1..m``;
* odd N: ``0`` is the centre cell, ``+j`` is ``[h_j, h_{j+1}]`` and ``-j``
  its mirror, ``j = 1..m-1``.

The index is what travels over the channel, so this encoding is stable.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass

import numpy as np

from .interval import Interval

# Scaled inputs within this distance outside [-1/2, 1/2] are treated as
# lying on the range edge (float rounding of y / sigma at an attained sup).
SATURATION_SLACK = 1e-9


class SaturationError(RuntimeError):
    """A scaled output fell outside the quantizer range."""


@dataclass(frozen=True)
class ScalarUncertainty:
    """Interval parameters of the scalar plant ``y+ = a y + b u``.

    ``a`` ranges over ``[a_star - eps, a_star + eps]`` and ``b`` over
    ``[b_star - delta, b_star + delta]``.
    """

    a_star: float
    eps: float
    b_star: float
    delta: float

    def __post_init__(self):
        if self.eps < 0 or self.delta < 0:
            raise ValueError("eps and delta must be nonnegative")
        if abs(self.a_star) - self.eps <= 1:
            raise ValueError("need |a_star| - eps > 1 (plant unstable for every a)")
        if abs(self.b_star) - self.delta <= 0:
            raise ValueError("need |b_star| - delta > 0 (input coefficient never zero)")

    @property
    def growth(self) -> float:
        """Worst-case open-loop growth ``|a*| + eps``."""
        return abs(self.a_star) + self.eps

    @property
    def r_a(self) -> float:
        return (abs(self.a_star) - self.eps) / (abs(self.a_star) + self.eps)

    @property
    def r_b(self) -> float:
        return (abs(self.b_star) - self.delta) / (abs(self.b_star) + self.delta)

    @property
    def log_r(self) -> float:
        """Natural log of ``r_a * r_b``, accurate for small eps and delta."""
        return (math.log1p(-2 * self.eps / (abs(self.a_star) + self.eps))
                + math.log1p(-2 * self.delta / (abs(self.b_star) + self.delta)))

    @property
    def input_ratio(self) -> float:
        """``delta / |b*|``."""
        return self.delta / abs(self.b_star)

    @property
    def is_certain(self) -> bool:
        return self.eps == 0 and self.delta == 0


@dataclass(frozen=True)
class Quantizer:
    n_cells: int
    boundaries: tuple[float, ...]

    def __post_init__(self):
        n = int(self.n_cells)
        if n < 2:
            raise ValueError("a quantizer needs at least two cells")
        h = tuple(float(x) for x in self.boundaries)
        m = (n + 1) // 2
        if len(h) != m + 1:
            raise ValueError(f"N={n} needs {m + 1} boundary points, got {len(h)}")
        if h[0] != 0.0 or h[-1] != 0.5:
            raise ValueError("boundaries must start at 0 and end at 1/2")
        if any(b <= a for a, b in zip(h, h[1:])):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "boundaries", h)

    @property
    def m(self) -> int:
        """Number of nonnegative boundary intervals, ``ceil(N/2)``."""
        return (self.n_cells + 1) // 2

    @property
    def odd(self) -> bool:
        return self.n_cells % 2 == 1

    @property
    def indices(self) -> list[int]:
        """All valid signed cell indices in increasing spatial order."""
        top = self.m if not self.odd else self.m - 1
        pos = list(range(1, top + 1))
        return [-j for j in reversed(pos)] + ([0] if self.odd else []) + pos

    def rate_index(self, idx: int) -> int:
        """Position ``l`` of the cell in the expansion-rate list ``w_l``."""
        self._check_index(idx)
        return abs(idx) if self.odd else abs(idx) - 1

    def _check_index(self, idx: int):
        if self.odd:
            ok = abs(idx) <= self.m - 1
        else:
            ok = 1 <= abs(idx) <= self.m
        if not ok:
            raise ValueError(f"invalid cell index {idx} for N={self.n_cells}")

    def quantize(self, y_scaled: float) -> int:
        return quantize(self, y_scaled)

    def cell(self, idx: int) -> Interval:
        return cell_interval(self, idx)

    @property
    def cell_widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def to_dict(self) -> dict:
        return {"n_cells": self.n_cells, "boundaries": list(self.boundaries)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Quantizer":
        return cls(int(d["n_cells"]), tuple(d["boundaries"]))

    @classmethod
    def from_json(cls, s: str) -> "Quantizer":
        return cls.from_dict(json.loads(s))


def _check_n(n_cells: int):
    if int(n_cells) != n_cells or n_cells < 2:
        raise ValueError(f"n_cells must be an integer >= 2, got {n_cells!r}")


def _log_t(n_cells: int, u: ScalarUncertainty) -> float:
    if n_cells % 2 == 0:
        return 0.0
    return math.log1p(u.input_ratio) - math.log1p(-u.eps / abs(u.a_star))


def _one_minus_t_r_pow(n_cells: int, u: ScalarUncertainty, l: int) -> float:
    """``1 - t r^l`` without cancellation when r and t are close to 1."""
    return -math.expm1(_log_t(n_cells, u) + l * u.log_r)


def _t_prime(n_cells: int) -> float:
    return 0.5 if n_cells % 2 else 0.0


def build_uniform(n_cells: int) -> Quantizer:
    """N equal cells of width ``1/N``."""
    _check_n(n_cells)
    m = (n_cells + 1) // 2
    parity = n_cells % 2
    h = [0.0] + [(2 * l - parity) / (2 * n_cells) for l in range(1, m + 1)]
    h[-1] = 0.5
    return Quantizer(n_cells, tuple(h))


def build_optimal(n_cells: int, u: ScalarUncertainty) -> Quantizer:
    """Quantizer equalising the expansion rate of every cell.

    Boundaries follow a geometric progression with ratio ``r_a * r_b``
    when the plant is uncertain; without uncertainty they are uniform.
    """
    _check_n(n_cells)
    m = (n_cells + 1) // 2
    h = [0.0] * (m + 1)
    # log_r == 0 only when eps and delta underflow; the limit is the uniform form
    if u.is_certain or u.log_r == 0.0:
        tp = _t_prime(n_cells)
        for l in range(1, m):
            h[l] = 0.5 * (l - tp) / (m - tp)
    else:
        denom = _one_minus_t_r_pow(n_cells, u, m)
        for l in range(1, m):
            h[l] = 0.5 * _one_minus_t_r_pow(n_cells, u, l) / denom
    h[m] = 0.5
    return Quantizer(n_cells, tuple(h))


def random_quantizer(n_cells: int, rng: np.random.Generator, min_gap: float = 1e-4) -> Quantizer:
    """Random strictly increasing boundaries with gaps of at least ``min_gap``."""
    _check_n(n_cells)
    m = (n_cells + 1) // 2
    while True:
        inner = np.sort(rng.uniform(0.0, 0.5, size=m - 1))
        h = np.concatenate([[0.0], inner, [0.5]])
        if np.all(np.diff(h) >= min_gap):
            return Quantizer(n_cells, tuple(h))


def quantize(q: Quantizer, y_scaled: float) -> int:
    """Signed index of the cell containing ``y_scaled``.

    A point on a boundary goes to the cell farther from the origin.
    """
    if not abs(y_scaled) <= 0.5 + SATURATION_SLACK:
        raise SaturationError(f"scaled output {y_scaled!r} outside [-1/2, 1/2]")
    a = min(abs(y_scaled), 0.5)
    h = q.boundaries
    # l such that h[l] <= a < h[l+1], clipped to the outermost interval
    l = min(bisect.bisect_right(h, a) - 1, q.m - 1)
    if q.odd:
        if l == 0:
            return 0
        j = l
    else:
        j = l + 1
    return j if y_scaled >= 0 else -j


def cell_interval(q: Quantizer, idx: int) -> Interval:
    """The cell with signed index ``idx`` in scaled coordinates."""
    q._check_index(idx)
    h = q.boundaries
    if q.odd:
        if idx == 0:
            return Interval(-h[1], h[1])
        lo, hi = h[abs(idx)], h[abs(idx) + 1]
    else:
        lo, hi = h[abs(idx) - 1], h[abs(idx)]
    return Interval(lo, hi) if idx > 0 else Interval(-hi, -lo)


def expansion_rates(q: Quantizer, u: ScalarUncertainty) -> np.ndarray:
    """Per-cell expansion rates ``w_0 .. w_{m-1}``.

    ``w_l`` is the factor by which the scale grows in one step after an
    output lands in the l-th nonnegative cell, under worst-case
    parameters and the midpoint-cancelling input.
    """
    h = np.asarray(q.boundaries)
    d = u.input_ratio
    a = abs(u.a_star)
    w = (a + u.eps) * (1 + d) * h[1:] - (a - u.eps) * (1 - d) * h[:-1]
    if q.odd:
        w[0] = 2 * (a + u.eps) * h[1]
    return w


def worst_case_rate(q: Quantizer, u: ScalarUncertainty) -> float:
    return float(np.max(expansion_rates(q, u)))


def w_star(n_cells: int, u: ScalarUncertainty, m: int, h_m: float = 0.5) -> float:
    """Smallest achievable worst-case rate over the cells inside ``[-h_m, h_m]``.

    ``m`` counts the boundary intervals in ``[0, h_m]``; with the defaults
    ``m = ceil(N/2)``, ``h_m = 1/2`` this is the optimum over the whole range.
    """
    _check_n(n_cells)
    if not 1 <= m <= (n_cells + 1) // 2:
        raise ValueError(f"m must lie in 1..ceil(N/2), got {m}")
    if u.is_certain or u.log_r == 0.0:
        return h_m * abs(u.a_star) / (m - _t_prime(n_cells))
    return h_m * u.growth * (1 + u.input_ratio) * -math.expm1(u.log_r) / _one_minus_t_r_pow(n_cells, u, m)


def band_lower_bound(q: Quantizer, u: ScalarUncertainty, m_lo: int, m_hi: int) -> float:
    """Lower bound on ``max(w_l for m_lo <= l < m_hi)`` from the band edges alone."""
    if not 1 <= m_lo < m_hi <= q.m:
        raise ValueError(f"need 1 <= m_lo < m_hi <= {q.m}, got ({m_lo}, {m_hi})")
    h_lo, h_hi = q.boundaries[m_lo], q.boundaries[m_hi]
    k = m_hi - m_lo
    if u.is_certain or u.log_r == 0.0:
        return (h_hi - h_lo) * abs(u.a_star) / k
    rk = math.exp(k * u.log_r)
    return (h_hi - rk * h_lo) * u.growth * (1 + u.input_ratio) * math.expm1(u.log_r) / math.expm1(k * u.log_r)

