"""Closed-form stabilizability limits for the scalar uncertain plant.

All rates are in bits (log base 2). A limit that cannot be met at any
rate is reported as ``math.inf``; an undefined loss multiplier as ``None``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

from .channel import nu as channel_nu
from .quantizer import ScalarUncertainty


@dataclass(frozen=True)
class ScalarLimits:
    p: float
    q: float
    r_a: float
    r_b: float
    delta_total: float
    nu: Optional[float]
    r_nec: float
    q_nec: float
    delta_ok: bool
    n_nec_even: float
    n_nec_odd: float

    @property
    def nu_divergent(self) -> bool:
        return self.nu is None

    @property
    def r_nec_finite(self) -> bool:
        return math.isfinite(self.r_nec)

    @property
    def q_ok(self) -> bool:
        return self.q > self.q_nec

    @property
    def min_even_n(self) -> Optional[int]:
        """Smallest even quantizer size meeting the rate limit, if any."""
        if not math.isfinite(self.n_nec_even):
            return None
        return min_even_above(self.n_nec_even)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["min_even_n"] = self.min_even_n
        return d


def total_uncertainty(u: ScalarUncertainty) -> float:
    """``Delta = eps + delta |a*| / |b*|``."""
    return u.eps + u.delta * abs(u.a_star) / abs(u.b_star)


def q_nec(u: ScalarUncertainty, p: float) -> float:
    """Recovery probability the channel must exceed; ``inf`` when ``Delta >= 1``."""
    A = u.growth
    D = total_uncertainty(u)
    if D >= 1:
        return math.inf
    return 1 - A**-2 + D**2 * p * (1 - A**-2) / (1 - D**2)


def _log_margin(u: ScalarUncertainty, p: float, q: float) -> Optional[float]:
    """``log2(1 - Delta nu)`` if the margin is positive, else ``None``."""
    v = channel_nu(p, q, u.growth)
    if v is None:
        return None
    x = total_uncertainty(u) * v
    return math.log1p(-x) / math.log(2) if x < 1 else None


def n_nec(u: ScalarUncertainty, p: float, q: float, parity: str = "even") -> float:
    """Number of cells a quantizer of the given parity must exceed.

    Raises ``ValueError`` where no finite number of cells suffices.
    """
    if parity not in ("even", "odd"):
        raise ValueError("parity must be 'even' or 'odd'")
    v = channel_nu(p, q, u.growth)
    if v is None:
        raise ValueError("loss multiplier diverges: no rate stabilizes this channel")
    if u.is_certain:
        return abs(u.a_star) * v
    lm = _log_margin(u, p, q)
    if lm is None:
        raise ValueError("Delta * nu >= 1: no rate stabilizes this plant")
    lr = u.log_r / math.log(2)
    if parity == "even":
        return 2 * lm / lr
    log_t = (math.log1p(u.input_ratio) - math.log1p(-u.eps / abs(u.a_star))) / math.log(2)
    return 2 * (lm - log_t) / lr - 1


def min_even_above(x: float) -> int:
    """Smallest even integer strictly greater than ``x`` (at least 2)."""
    return max(2, 2 * math.floor(x / 2) + 2)


def compute_limits(u: ScalarUncertainty, p: float, q: float) -> ScalarLimits:
    v = channel_nu(p, q, u.growth)
    D = total_uncertainty(u)
    if v is None:
        r_nec = math.inf
    elif u.is_certain:
        r_nec = math.log2(abs(u.a_star)) + math.log2(v)
    else:
        lm = _log_margin(u, p, q)
        r_nec = math.inf if lm is None else math.log2(2 * lm / (u.log_r / math.log(2)))
    finite = math.isfinite(r_nec)
    return ScalarLimits(
        p=p, q=q, r_a=u.r_a, r_b=u.r_b, delta_total=D, nu=v, r_nec=r_nec,
        q_nec=q_nec(u, p), delta_ok=D < 1,
        n_nec_even=n_nec(u, p, q, "even") if finite else math.inf,
        n_nec_odd=n_nec(u, p, q, "odd") if finite else math.inf,
    )


def is_stabilizable(u: ScalarUncertainty, p: float, q: float, n_cells: int) -> bool:
    """All three scalar conditions hold for an ``n_cells``-symbol channel."""
    lim = compute_limits(u, p, q)
    return lim.delta_ok and lim.q_ok and math.log2(n_cells) > lim.r_nec


def comparison_bounds(u: ScalarUncertainty) -> tuple[float, float]:
    """Earlier sufficient rates for a known input coefficient on a lossless link.

    Returns ``(R_suf, R_suf_prime)``; either may be ``inf``.
    """
    if u.delta != 0:
        raise ValueError("comparison bounds are defined for delta = 0 only")
    a, e = abs(u.a_star), u.eps
    num = a - e * (a + e)
    den = 1 - e * (2 * a + 2 * e + 1)
    r_suf = math.log2(num / den) if num > 0 and den > 0 else math.inf
    r_suf_prime = math.log2(a / (1 - e)) if e < 1 else math.inf
    return r_suf, r_suf_prime
