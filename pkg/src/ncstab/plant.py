"""Autoregressive plant with interval-valued, time-varying parameters.

    y[k+1] = a_1 y[k] + a_2 y[k-1] + ... + a_n y[k-n+1] + b u[k]

with ``a_i`` in ``[a_i* - eps_i, a_i* + eps_i]`` and ``b`` in
``[b* - delta, b* + delta]`` redrawn every step by a perturbation policy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import make_rng
from .interval import Interval, interval_sum, mul
from .quantizer import ScalarUncertainty

POLICIES = ("nominal", "uniform-random", "endpoint-random", "greedy-adversarial")


@dataclass(frozen=True)
class ARUncertainty:
    a_star: tuple[float, ...]
    eps: tuple[float, ...]
    b_star: float
    delta: float

    def __post_init__(self):
        a = tuple(float(x) for x in np.atleast_1d(self.a_star))
        e = tuple(float(x) for x in np.atleast_1d(self.eps))
        if not a:
            raise ValueError("order must be at least 1")
        if len(a) != len(e):
            raise ValueError("a_star and eps must have the same length")
        if any(x < 0 for x in e) or self.delta < 0:
            raise ValueError("eps and delta must be nonnegative")
        if abs(self.b_star) - self.delta <= 0:
            raise ValueError("need |b_star| - delta > 0 (input coefficient never zero)")
        object.__setattr__(self, "a_star", a)
        object.__setattr__(self, "eps", e)
        object.__setattr__(self, "b_star", float(self.b_star))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def order(self) -> int:
        return len(self.a_star)

    @property
    def a_intervals(self) -> list[Interval]:
        return [Interval.centered(a, e) for a, e in zip(self.a_star, self.eps)]

    @property
    def b_interval(self) -> Interval:
        return Interval.centered(self.b_star, self.delta)

    @property
    def input_ratio(self) -> float:
        return self.delta / abs(self.b_star)

    @classmethod
    def from_scalar(cls, u: ScalarUncertainty) -> "ARUncertainty":
        return cls((u.a_star,), (u.eps,), u.b_star, u.delta)

    def scalar(self) -> ScalarUncertainty:
        """First-order view; raises if the scalar instability assumption fails."""
        if self.order != 1:
            raise ValueError("only a first-order uncertainty has a scalar view")
        return ScalarUncertainty(self.a_star[0], self.eps[0], self.b_star, self.delta)


@dataclass
class PerturbationPolicy:
    """How the plant picks its parameters inside the uncertainty intervals.

    ``greedy-adversarial`` chooses the interval endpoints that maximise
    ``|y[k+1]|`` given the current history and input. It is a one-step
    heuristic, not the worst case over whole perturbation sequences.
    """

    mode: str = "nominal"
    seed: object = None
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in POLICIES:
            raise ValueError(f"unknown policy {self.mode!r}; choose from {POLICIES}")
        self.rng = make_rng(self.seed)


def draw_params(policy: PerturbationPolicy, unc: ARUncertainty, history: Sequence[float], u: float):
    """Pick ``(a_1..a_n, b)`` for one step.

    ``history`` is ``(y[k], y[k-1], ..., y[k-n+1])``, most recent first.
    """
    a_star = np.asarray(unc.a_star)
    eps = np.asarray(unc.eps)
    mode = policy.mode
    if mode == "nominal":
        return tuple(a_star), unc.b_star
    # one block of n+1 uniforms per step for both random modes
    if mode == "uniform-random":
        s = 2.0 * policy.rng.random(unc.order + 1) - 1.0
        return tuple(a_star + eps * s[:-1]), unc.b_star + unc.delta * s[-1]
    if mode == "endpoint-random":
        s = np.where(policy.rng.random(unc.order + 1) < 0.5, -1.0, 1.0)
        return tuple(a_star + eps * s[:-1]), unc.b_star + unc.delta * s[-1]
    # greedy-adversarial: the output is affine in each parameter separately,
    # so the endpoint maximiser and minimiser are read off the signs
    y = np.asarray(history, dtype=float)
    sy = np.where(y >= 0, 1.0, -1.0)
    su = 1.0 if u >= 0 else -1.0
    a_up, b_up = a_star + eps * sy, unc.b_star + unc.delta * su
    a_dn, b_dn = a_star - eps * sy, unc.b_star - unc.delta * su
    hi = step_plant(history, u, a_up, b_up)
    lo = step_plant(history, u, a_dn, b_dn)
    if abs(hi) >= abs(lo):
        return tuple(a_up), b_up
    return tuple(a_dn), b_dn


def step_plant(history: Sequence[float], u: float, a: Sequence[float], b: float) -> float:
    """One step of the AR recursion with the given parameter draw."""
    return float(sum(ai * yi for ai, yi in zip(a, history)) + b * u)


def reachable_set(unc: ARUncertainty, history: Sequence[float], u: float) -> Interval:
    """Every ``y[k+1]`` any admissible parameter draw can produce."""
    terms = [mul(A, Interval.point(y)) for A, y in zip(unc.a_intervals, history)]
    return interval_sum(terms) + mul(unc.b_interval, Interval.point(u))


class Plant:
    """Mutable plant instance holding the last ``n`` outputs."""

    def __init__(self, unc: ARUncertainty, y0: Sequence[float], policy: PerturbationPolicy | None = None,
                 audit: bool = False):
        if len(y0) != unc.order:
            raise ValueError(f"need {unc.order} initial outputs, got {len(y0)}")
        self.unc = unc
        # most recent first
        self.history = [float(y) for y in y0]
        self.policy = policy or PerturbationPolicy()
        self.audit = [] if audit else None
        self._a_iv = unc.a_intervals
        self._b_iv = unc.b_interval

    @property
    def y(self) -> float:
        return self.history[0]

    def step(self, u: float) -> float:
        a, b = draw_params(self.policy, self.unc, self.history, u)
        if not (all(A.lo <= x <= A.hi for A, x in zip(self._a_iv, a)) and self._b_iv.lo <= b <= self._b_iv.hi):
            raise AssertionError(f"policy drew parameters outside their intervals: a={a}, b={b}")
        y_next = step_plant(self.history, u, a, b)
        if self.audit is not None:
            self.audit.append((tuple(a), b))
        self.history = [y_next] + self.history[:-1]
        return y_next
