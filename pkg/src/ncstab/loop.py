"""Encoder, decoder and controller of the quantized feedback loop.

Both ends of the channel run an identical :class:`LoopState`. The encoder
quantizes ``y[k] / sigma[k]``; the decoder turns the received cell (or the
loss flag) into the estimate ``Y[k]``. Thanks to the acknowledgment the
encoder learns ``gamma[k]`` and performs the same update, so the scale
``sigma`` and the input ``u`` never need to be transmitted.

Time line of one step ``k``::

    sigma[k] known on both sides
    encoder  : s[k] = quantize(y[k] / sigma[k])
    channel  : gamma[k]
    both     : Y[k] = sigma[k] * cell(s[k])  or  [-sigma[k]/2, sigma[k]/2]
    both     : Y-[k+1] = sum_i A_i * Y[k-i+1]
               sigma[k+1] = width(Y-) + 2 delta/|b*| |mid(Y-)|  (+ rounding guard)
               u[k] = -mid(Y-) / b*
    plant    : y[k+1] = sum_i a_i y[k-i+1] + b u[k]

The configured prior intervals play the role of ``Y[-n+1] .. Y[0]``; the
first transmission happens at ``k = 1`` with ``sigma[1]`` obtained from
them by one predict/scale pass.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

from .channel import GilbertElliott
from .interval import Interval, interval_sum, mul
from .plant import ARUncertainty, Plant
from .quantizer import Quantizer, ScalarUncertainty, cell_interval, expansion_rates, quantize

SIGMA_FLOOR = 1e-300
SIGMA_CEIL = 1e150
# Relative allowance for rounding in the plant and in the cell arithmetic.
# Without it a plant that sits on the edge of the range every step (the
# greedy adversary does) drifts out by an error that grows like
# (|a|+eps)/w per step and saturates the quantizer after a dozen steps.
ROUND_GUARD = 2.0**-46


def predict(estimates: Sequence[Interval], unc: ARUncertainty) -> Interval:
    """Prediction set of the uncontrolled next output.

    ``estimates`` is ``(Y[k], Y[k-1], ..., Y[k-n+1])``, most recent first.
    """
    if len(estimates) != unc.order:
        raise ValueError(f"need {unc.order} estimates, got {len(estimates)}")
    return interval_sum(mul(A, Y) for A, Y in zip(unc.a_intervals, estimates))


def scale_update(y_minus: Interval, delta: float, b_star: float) -> float:
    """Smallest quantizer range covering ``Y- + B u`` under the midpoint input."""
    return y_minus.width + 2 * delta / abs(b_star) * abs(y_minus.midpoint)


def rounding_guard(estimates: Sequence[Interval], scales: Sequence[float], unc: ARUncertainty,
                   mid: float) -> float:
    """Extra scale covering floating point error in ``y`` and in the cells.

    Bounded by ``ROUND_GUARD`` times the magnitude of every term that enters
    the next output, so it is a relative change of order 1e-14.
    """
    s = 0.0
    for A, Y, sg in zip(unc.a_intervals, estimates, scales):
        s = s + A.mag * (Y.mag + sg)
    s = s + (1 + unc.input_ratio) * abs(mid)
    return ROUND_GUARD * s


def control(y_minus: Interval, b_star: float) -> float:
    """Input moving the midpoint of ``Y-`` to the origin for the nominal ``b*``."""
    if b_star == 0:
        raise ValueError("b_star must be nonzero")
    return -y_minus.midpoint / b_star


def eta(gamma: int, cell: Optional[int], q: Quantizer, u: ScalarUncertainty) -> float:
    """One-step growth factor of the scale in the scalar loop."""
    if gamma not in (0, 1) or (gamma == 1) != (cell is not None):
        raise ValueError("a cell index must be given exactly when the packet arrived")
    if gamma == 0:
        return u.growth
    return float(expansion_rates(q, u)[q.rate_index(cell)])


class LoopState:
    """Estimator state kept identically by the encoder and the decoder.

    After construction or :meth:`update`, ``sigma`` is the scale for the
    next output to be quantized, ``prediction`` the set ``Y-`` it was
    derived from and ``u`` the input to apply now.
    """

    def __init__(self, unc: ARUncertainty, quantizer: Quantizer, priors: Sequence[Interval]):
        if len(priors) != unc.order:
            raise ValueError(f"need {unc.order} prior intervals, got {len(priors)}")
        self.unc = unc
        self.quantizer = quantizer
        self.estimates = list(priors)
        # scale each estimate was quantized with; priors carry no cell error
        self.scales = [2 * Y.mag for Y in priors]
        self.eta_last = math.nan
        self.sigma = math.nan
        self._advance()

    def _advance(self):
        self.prediction = predict(self.estimates, self.unc)
        self.sigma = (scale_update(self.prediction, self.unc.delta, self.unc.b_star)
                      + rounding_guard(self.estimates, self.scales, self.unc, self.prediction.midpoint))
        self.u = control(self.prediction, self.unc.b_star)

    def estimate(self, gamma: int, idx: Optional[int]) -> Interval:
        if gamma:
            return cell_interval(self.quantizer, idx).scale(self.sigma)
        return Interval.symmetric(self.sigma)

    def update(self, gamma: int, idx: Optional[int]) -> Interval:
        """Fold in ``Y[k]`` and advance to the next scale and input."""
        Y = self.estimate(gamma, idx)
        sigma_old = self.sigma
        self.estimates = [Y] + self.estimates[:-1]
        self.scales = [sigma_old] + self.scales[:-1]
        self._advance()
        self.eta_last = self.sigma / sigma_old
        return Y


class Encoder:
    def __init__(self, state: LoopState):
        self.state = state
        self._last = None

    @property
    def sigma(self) -> float:
        return self.state.sigma

    def encode(self, y: float) -> int:
        self._last = quantize(self.state.quantizer, y / self.state.sigma)
        return self._last

    def acknowledge(self, gamma: int):
        self.state.update(gamma, self._last if gamma else None)


class Decoder:
    """Receiver side; also the controller, since it owns ``u``."""

    def __init__(self, state: LoopState):
        self.state = state

    @property
    def sigma(self) -> float:
        return self.state.sigma

    @property
    def u(self) -> float:
        return self.state.u

    def receive(self, idx: Optional[int]) -> Interval:
        """``idx`` is the received symbol, or ``None`` for a lost packet."""
        return self.state.update(0 if idx is None else 1, idx)


@dataclass
class StepRecord:
    k: int
    gamma: int
    sigma: float
    y: float
    u: float
    cell_index: Optional[int]
    Y_lo: float
    Y_hi: float
    sigma_next: float

    @property
    def supy(self) -> float:
        return max(abs(self.Y_lo), abs(self.Y_hi))


TRAJECTORY_FIELDS = ("k", "gamma", "sigma", "y", "u", "cell_index", "Y_lo", "Y_hi")


@dataclass
class Trajectory:
    records: list[StepRecord] = field(default_factory=list)
    prior_sigmas: tuple[float, ...] = ()
    status: str = "running"

    @property
    def sigmas(self) -> list[float]:
        return [r.sigma for r in self.records]

    @property
    def gammas(self) -> list[int]:
        return [r.gamma for r in self.records]

    def effective_gammas(self) -> list[int]:
        """``gamma`` for times ``-n+1 .. K``, prior slots counted as losses."""
        return [0] * len(self.prior_sigmas) + self.gammas

    def to_csv(self, fh: IO[str]):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_FIELDS)
        for r in self.records:
            w.writerow([r.k, r.gamma, repr(r.sigma), repr(r.y), repr(r.u),
                        "" if r.cell_index is None else r.cell_index, repr(r.Y_lo), repr(r.Y_hi)])


class ClosedLoop:
    """Plant, channel, encoder and decoder wired together.

    Encoder and decoder each hold their own :class:`LoopState` and only
    exchange the symbol and the acknowledgment bit.
    """

    def __init__(self, plant: Plant, channel: GilbertElliott, quantizer: Quantizer,
                 priors: Sequence[Interval] | None = None):
        unc = plant.unc
        if priors is None:
            priors = [Interval(-0.5, 0.5)] * unc.order
        priors = list(priors)
        for Y, y in zip(priors, plant.history):
            if not Y.contains(y):
                raise ValueError(f"initial output {y} outside its prior interval {Y}")
        self.plant = plant
        self.channel = channel
        self.quantizer = quantizer
        self.encoder = Encoder(LoopState(unc, quantizer, priors))
        self.decoder = Decoder(LoopState(unc, quantizer, priors))
        self.k = 0
        self.trajectory = Trajectory(prior_sigmas=tuple(2 * Y.mag for Y in reversed(priors)))
        plant.step(self.decoder.u)

    def step(self) -> StepRecord:
        self.k += 1
        y = self.plant.y
        sigma = self.decoder.sigma
        idx = self.encoder.encode(y)
        gamma = self.channel.step()
        Y = self.decoder.receive(idx if gamma else None)
        self.encoder.acknowledge(gamma)
        if self.encoder.sigma != self.decoder.sigma:
            raise AssertionError(f"encoder and decoder lost sync at k={self.k}")
        u = self.decoder.u
        self.plant.step(u)
        rec = StepRecord(self.k, gamma, sigma, y, u, idx if gamma else None, Y.lo, Y.hi, self.decoder.sigma)
        self.trajectory.records.append(rec)
        return rec

    def run(self, horizon: int) -> Trajectory:
        """Step until ``horizon`` records exist or the scale leaves the float range."""
        tr = self.trajectory
        tr.status = "running"
        while self.k < horizon:
            rec = self.step()
            if rec.sigma_next < SIGMA_FLOOR:
                tr.status = "converged"
                return tr
            if rec.sigma_next > SIGMA_CEIL:
                tr.status = "diverged"
                return tr
        tr.status = "ok"
        return tr
