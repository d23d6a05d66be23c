"""Closed real intervals for set-valued output estimates.

Only what the estimator needs: products, Minkowski sums and scaling.
No outward rounding is performed; containment checks downstream use a
relative slack instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable


@dataclass(frozen=True, slots=True)
class Interval:
    """The closed interval ``[lo, hi]``. Degenerate intervals are allowed."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"empty interval: lo={lo!r} > hi={hi!r}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(x, x)

    @classmethod
    def centered(cls, center: float, radius: float) -> "Interval":
        """``[center - radius, center + radius]``; radius must be nonnegative."""
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        return cls(center - radius, center + radius)

    @classmethod
    def symmetric(cls, width: float) -> "Interval":
        """``[-width/2, width/2]``, e.g. the full quantizer range for scale ``width``."""
        return cls(-0.5 * width, 0.5 * width)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def mag(self) -> float:
        """``sup |y|`` over the interval."""
        return max(abs(self.lo), abs(self.hi))

    def contains(self, y: float, rtol: float = 0.0) -> bool:
        """Inclusive membership test, optionally padded by ``rtol * mag``."""
        pad = rtol * max(self.mag, abs(y))
        return self.lo - pad <= y <= self.hi + pad

    def __contains__(self, y: float) -> bool:
        return self.contains(y)

    def __add__(self, other: "Interval") -> "Interval":
        return minkowski_sum(self, other)

    def __mul__(self, other) -> "Interval":
        if isinstance(other, Interval):
            return mul(self, other)
        return self.scale(float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def scale(self, s: float) -> "Interval":
        a, b = s * self.lo, s * self.hi
        return Interval(a, b) if a <= b else Interval(b, a)

    def issubset(self, other: "Interval", rtol: float = 0.0) -> bool:
        pad = rtol * max(self.mag, other.mag)
        return other.lo - pad <= self.lo and self.hi <= other.hi + pad

    def __iter__(self):
        yield self.lo
        yield self.hi


def mul(a: Interval, y: Interval) -> Interval:
    """Exact product set ``{s*t : s in a, t in y}`` via the four endpoint products."""
    p = (a.lo * y.lo, a.lo * y.hi, a.hi * y.lo, a.hi * y.hi)
    return Interval(min(p), max(p))


def minkowski_sum(x: Interval, y: Interval) -> Interval:
    return Interval(x.lo + y.lo, x.hi + y.hi)


def interval_sum(terms: Iterable[Interval]) -> Interval:
    """Minkowski sum of any number of intervals; the empty sum is ``[0, 0]``."""
    return reduce(minkowski_sum, terms, Interval(0.0, 0.0))


def width(i: Interval) -> float:
    return i.width


def midpoint(i: Interval) -> float:
    return i.midpoint


def contains(i: Interval, y: float) -> bool:
    return i.contains(y)
