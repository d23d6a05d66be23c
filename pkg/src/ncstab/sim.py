"""Monte Carlo ensembles of the closed loop and parameter sweeps.

Every trial draws its channel and perturbation streams from
``SeedSequence(seed, spawn_key=(trial,))``, so results do not depend on
how trials are split across workers or in which order they finish.

:func:`simulate_batch` advances all trials of a chunk together with numpy.
It performs exactly the floating point operations of
:class:`ncstab.loop.LoopState` and :class:`ncstab.plant.Plant`, and is
checked against them trajectory by trajectory in the test suite.
"""
from __future__ import annotations

import csv
import enum
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .channel import GilbertElliott, make_rng
from .interval import Interval
from .limits import compute_limits
from .loop import ROUND_GUARD, SIGMA_CEIL, SIGMA_FLOOR, ClosedLoop
from .plant import POLICIES, ARUncertainty, PerturbationPolicy, Plant
from .quantizer import SATURATION_SLACK, Quantizer, SaturationError, ScalarUncertainty, build_optimal

WORKERS_ENV = "NCSTAB_WORKERS"


@dataclass(frozen=True)
class Scenario:
    unc: ARUncertainty
    quantizer: Quantizer
    p: float
    q: float
    policy: str = "nominal"
    priors: Optional[tuple[Interval, ...]] = None
    y0: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        n = self.unc.order
        if self.priors is not None and len(self.priors) != n:
            raise ValueError(f"need {n} prior intervals")
        if self.y0 is not None and len(self.y0) != n:
            raise ValueError(f"need {n} initial outputs")

    @property
    def prior_intervals(self) -> list[Interval]:
        """``[Y[0], Y[-1], ...]``, most recent first."""
        return list(self.priors) if self.priors is not None else [Interval(-0.5, 0.5)] * self.unc.order

    @property
    def initial_outputs(self) -> list[float]:
        if self.y0 is not None:
            return list(self.y0)
        return [Y.midpoint for Y in self.prior_intervals]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    trials: int = 1000
    horizon: int = 200
    seed: int = 0
    dead_band: float = 0.01
    fit_fraction: float = 0.5
    # number of arrivals used for the per-arrival fit (None: all common arrivals)
    arrival_window: Optional[int] = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.horizon < self.scenario.unc.order:
            raise ValueError("horizon must be at least the plant order")


def trial_streams(seed: int, trial: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """(channel, perturbation) seed sequences of one trial."""
    ch, pol = np.random.SeedSequence(seed, spawn_key=(trial,)).spawn(2)
    return ch, pol


def make_loop(sc: Scenario, seed: int, trial: int = 0) -> ClosedLoop:
    """Reference closed loop for one trial, on the same streams as the ensemble."""
    ch_ss, pol_ss = trial_streams(seed, trial)
    plant = Plant(sc.unc, sc.initial_outputs, PerturbationPolicy(sc.policy, pol_ss))
    return ClosedLoop(plant, GilbertElliott(sc.p, sc.q, seed=ch_ss), sc.quantizer, sc.prior_intervals)


@dataclass
class BatchResult:
    """Per-trial arrays for steps ``k = 1..K``; shape ``(trials, K)``."""

    sigma: np.ndarray
    supy: np.ndarray
    gamma: np.ndarray
    y: np.ndarray
    status: np.ndarray  # 0 running/ok, 1 converged, 2 diverged


def simulate_batch(sc: Scenario, horizon: int, seed: int, trials: Sequence[int]) -> BatchResult:
    """Run the listed trials side by side for ``horizon`` steps."""
    trials = list(trials)
    T, K, n = len(trials), horizon, sc.unc.order
    unc, qz = sc.unc, sc.quantizer

    gam = np.empty((T, K), dtype=np.int8)
    noise = None
    if sc.policy in ("uniform-random", "endpoint-random"):
        noise = np.empty((T, K + 1, n + 1))
    for t, trial in enumerate(trials):
        ch_ss, pol_ss = trial_streams(seed, trial)
        gam[t] = GilbertElliott(sc.p, sc.q, seed=ch_ss).run(K)
        if noise is not None:
            noise[t] = make_rng(pol_ss).random((K + 1, n + 1))

    a_star = np.asarray(unc.a_star)
    eps = np.asarray(unc.eps)
    A_lo = [iv.lo for iv in unc.a_intervals]
    A_hi = [iv.hi for iv in unc.a_intervals]
    b_star, delta = unc.b_star, unc.delta
    c_in = 2 * delta / abs(b_star)
    A_mag = [iv.mag for iv in unc.a_intervals]
    one_d = 1 + unc.input_ratio
    h = np.asarray(qz.boundaries)
    m = qz.m

    priors = sc.prior_intervals
    est_lo = np.tile([Y.lo for Y in priors], (T, 1))
    est_hi = np.tile([Y.hi for Y in priors], (T, 1))
    est_sg = np.tile([2 * Y.mag for Y in priors], (T, 1))
    yh = np.tile(np.asarray(sc.initial_outputs, dtype=float), (T, 1))

    def advance(lo_arr, hi_arr, sg_arr):
        plo = np.zeros(T)
        phi = np.zeros(T)
        guard = np.zeros(T)
        for i in range(n):
            lo, hi = lo_arr[:, i], hi_arr[:, i]
            p1, p2, p3, p4 = A_lo[i] * lo, A_lo[i] * hi, A_hi[i] * lo, A_hi[i] * hi
            plo = plo + np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
            phi = phi + np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
            guard = guard + A_mag[i] * (np.maximum(np.abs(lo), np.abs(hi)) + sg_arr[:, i])
        mid = 0.5 * (plo + phi)
        guard = ROUND_GUARD * (guard + one_d * np.abs(mid))
        return ((phi - plo) + c_in * np.abs(mid)) + guard, -mid / b_star

    def plant_step(yh, u, step):
        if sc.policy == "nominal":
            a = np.broadcast_to(a_star, (T, n))
            b = np.full(T, b_star)
        elif noise is not None:
            s = noise[:, step, :]
            if sc.policy == "uniform-random":
                s = 2.0 * s - 1.0
            else:
                s = np.where(s < 0.5, -1.0, 1.0)
            a = a_star + eps * s[:, :-1]
            b = b_star + delta * s[:, -1]
        else:
            sy = np.where(yh >= 0, 1.0, -1.0)
            su = np.where(u >= 0, 1.0, -1.0)
            a_up, b_up = a_star + eps * sy, b_star + delta * su
            a_dn, b_dn = a_star - eps * sy, b_star - delta * su
            up = np.abs(_ar(a_up, yh, b_up, u)) >= np.abs(_ar(a_dn, yh, b_dn, u))
            a = np.where(up[:, None], a_up, a_dn)
            b = np.where(up, b_up, b_dn)
        y_next = _ar(a, yh, b, u)
        return np.concatenate([y_next[:, None], yh[:, :-1]], axis=1)

    sigma, u = advance(est_lo, est_hi, est_sg)
    yh = plant_step(yh, u, 0)

    out_sigma = np.empty((T, K))
    out_supy = np.empty((T, K))
    out_y = np.empty((T, K))
    status = np.zeros(T, dtype=np.int8)
    active = np.ones(T, dtype=bool)
    for k in range(K):
        y = yh[:, 0]
        safe_sigma = np.where(active, sigma, 1.0)
        s = np.where(active, y / safe_sigma, 0.0)
        bad = np.abs(s) > 0.5 + SATURATION_SLACK
        if bad.any():
            t = int(np.flatnonzero(bad)[0])
            raise SaturationError(f"trial {trials[t]} saturated at k={k + 1}: y/sigma={s[t]!r}")
        a_abs = np.minimum(np.abs(s), 0.5)
        l = np.minimum(np.searchsorted(h, a_abs, side="right") - 1, m - 1)
        c_lo, c_hi = h[l], h[l + 1]
        if qz.odd:
            centre = l == 0
            c_lo = np.where(centre, -h[1], c_lo)
        pos = s >= 0
        if qz.odd:
            cl = np.where(centre, c_lo, np.where(pos, c_lo, -c_hi))
            ch = np.where(centre, c_hi, np.where(pos, c_hi, -h[l]))
        else:
            cl = np.where(pos, c_lo, -c_hi)
            ch = np.where(pos, c_hi, -c_lo)
        g = gam[:, k] == 1
        Y_lo = np.where(g, sigma * cl, -0.5 * sigma)
        Y_hi = np.where(g, sigma * ch, 0.5 * sigma)

        out_sigma[:, k] = sigma
        out_supy[:, k] = np.maximum(np.abs(Y_lo), np.abs(Y_hi))
        out_y[:, k] = y

        new_lo = np.concatenate([Y_lo[:, None], est_lo[:, :-1]], axis=1)
        new_hi = np.concatenate([Y_hi[:, None], est_hi[:, :-1]], axis=1)
        new_sg = np.concatenate([sigma[:, None], est_sg[:, :-1]], axis=1)
        new_sigma, new_u = advance(new_lo, new_hi, new_sg)
        new_yh = plant_step(yh, new_u, k + 1)

        keep = active[:, None]
        est_lo = np.where(keep, new_lo, est_lo)
        est_hi = np.where(keep, new_hi, est_hi)
        est_sg = np.where(keep, new_sg, est_sg)
        yh = np.where(keep, new_yh, yh)
        sigma = np.where(active, new_sigma, sigma)

        conv = active & (new_sigma < SIGMA_FLOOR)
        div = active & (new_sigma > SIGMA_CEIL)
        status[conv] = 1
        status[div] = 2
        active &= ~(conv | div)
        # converged trials contribute zero from here on
        sigma = np.where(status == 1, 0.0, sigma)

    return BatchResult(out_sigma, out_supy, gam, out_y, status)


def _ar(a, yh, b, u):
    acc = np.zeros(len(u))
    for i in range(yh.shape[1]):
        acc = acc + a[:, i] * yh[:, i]
    return acc + b * u


class EnsembleVerdict(enum.Enum):
    MSS = "mss-evidence"
    DIVERGENCE = "divergence-evidence"
    INCONCLUSIVE = "inconclusive"


@dataclass
class EnsembleResult:
    mean_sigma_sq: np.ndarray
    mean_supy_sq: np.ndarray
    log2_rate: float
    verdict: EnsembleVerdict
    arrival_mean_sigma_sq: np.ndarray
    arrival_log2_rate: float
    converged_trials: int = 0
    diverged_trials: int = 0
    config: Optional[ExperimentConfig] = field(default=None, repr=False)

    @property
    def rate(self) -> float:
        """Fitted per-step factor of ``E[sigma^2]``."""
        return 2.0**self.log2_rate

    @property
    def arrival_rate(self) -> float:
        """Fitted factor of ``E[sigma^2]`` between consecutive arrivals."""
        return 2.0**self.arrival_log2_rate

    def to_csv(self, fh: IO[str]):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "mean_sigma_sq", "mean_supy_sq"])
        for k, (s, y) in enumerate(zip(self.mean_sigma_sq, self.mean_supy_sq), start=1):
            w.writerow([k, repr(float(s)), repr(float(y))])

    def summary(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "log2_rate_per_step": self.log2_rate,
            "rate_per_step": self.rate,
            "arrival_log2_rate": self.arrival_log2_rate,
            "arrival_rate": self.arrival_rate,
            "arrivals_fitted": int(len(self.arrival_mean_sigma_sq)),
            "converged_trials": self.converged_trials,
            "diverged_trials": self.diverged_trials,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.summary(), **kw)


def fit_log2_rate(values: np.ndarray, start: int = 0) -> float:
    """Least-squares slope of ``log2(values[start:])`` against the index."""
    v = np.asarray(values[start:], dtype=float)
    x = np.arange(start, start + len(v), dtype=float)
    ok = v > 0
    if ok.sum() < 2:
        return -math.inf if np.all(v == 0) else math.nan
    return float(np.polyfit(x[ok], np.log2(v[ok]), 1)[0])


def arrival_moments(batch: BatchResult, window: Optional[int] = None) -> np.ndarray:
    """Mean of ``sigma^2`` at the j-th arrival, over arrivals every trial reached."""
    rows = []
    for sig, g in zip(batch.sigma, batch.gamma):
        rows.append(sig[g == 1])
    J = min(len(r) for r in rows)
    if window is not None:
        J = min(J, window)
    return np.mean([r[:J] ** 2 for r in rows], axis=0) if J else np.empty(0)


def _chunks(n: int, parts: int) -> list[range]:
    size = math.ceil(n / parts)
    return [range(i, min(n, i + size)) for i in range(0, n, size)]


def _run_chunk(args):
    sc, horizon, seed, trials = args
    return simulate_batch(sc, horizon, seed, trials)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_batches(cfg: ExperimentConfig, workers: Optional[int] = None, chunk: int = 5000) -> BatchResult:
    workers = workers or _workers()
    parts = max(workers, math.ceil(cfg.trials / chunk))
    jobs = [(cfg.scenario, cfg.horizon, cfg.seed, r) for r in _chunks(cfg.trials, parts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    return BatchResult(*(np.concatenate([getattr(r, f) for r in results])
                         for f in ("sigma", "supy", "gamma", "y", "status")))


def run_ensemble(cfg: ExperimentConfig, workers: Optional[int] = None) -> EnsembleResult:
    """Aggregate ``E[sigma_k^2]`` over trials and classify the trend.

    The per-step rate is fitted on the last ``fit_fraction`` of the horizon;
    slopes within ``dead_band`` (log2 units per step) of zero are inconclusive.
    """
    batch = run_batches(cfg, workers)
    ms = np.mean(batch.sigma**2, axis=0)
    my = np.mean(batch.supy**2, axis=0)
    start = int(round(cfg.horizon * (1 - cfg.fit_fraction)))
    slope = fit_log2_rate(ms, min(start, cfg.horizon - 2))
    if slope < -cfg.dead_band:
        verdict = EnsembleVerdict.MSS
    elif slope > cfg.dead_band:
        verdict = EnsembleVerdict.DIVERGENCE
    else:
        verdict = EnsembleVerdict.INCONCLUSIVE
    am = arrival_moments(batch, cfg.arrival_window)
    return EnsembleResult(
        mean_sigma_sq=ms, mean_supy_sq=my, log2_rate=slope, verdict=verdict,
        arrival_mean_sigma_sq=am, arrival_log2_rate=fit_log2_rate(am) if len(am) >= 2 else math.nan,
        converged_trials=int((batch.status == 1).sum()), diverged_trials=int((batch.status == 2).sum()),
        config=cfg,
    )


# ---------------------------------------------------------------- sweeps

SWEEP_AXES = ("eps", "delta", "p", "q", "n_cells")


def sweep(base: dict, axes: dict[str, Sequence[float]], mc: Optional[dict] = None) -> list[dict]:
    """Scalar limits over the cartesian product of ``axes``.

    ``base`` holds ``a_star, b_star, eps, delta, p, q``; each axis overrides
    one of them (or adds ``n_cells``). Rows come out in row-major order of
    ``axes``. With ``n_cells`` on an axis the rows also carry the MJLS
    verdict for the optimal quantizer; ``mc`` (``trials``, ``horizon``,
    ``seed``) additionally attaches a Monte Carlo verdict.
    """
    from .mjls import build_model, is_mss

    for name in axes:
        if name not in SWEEP_AXES:
            raise ValueError(f"cannot sweep over {name!r}; choose from {SWEEP_AXES}")
    names = list(axes)
    rows = []
    for values in itertools.product(*(axes[n] for n in names)):
        pt = dict(base)
        pt.update(zip(names, values))
        u = ScalarUncertainty(pt["a_star"], pt["eps"], pt["b_star"], pt["delta"])
        lim = compute_limits(u, pt["p"], pt["q"])
        row = {n: pt[n] for n in names}
        row.update(R_nec=lim.r_nec, q_nec=lim.q_nec, delta_ok=lim.delta_ok)
        if "n_cells" in pt:
            N = int(pt["n_cells"])
            qz = build_optimal(N, u)
            verdict = is_mss(build_model(ARUncertainty.from_scalar(u), qz, pt["p"], pt["q"]))
            row.update(rho=verdict.rho, mjls=verdict.verdict.value)
            if mc:
                cfg = ExperimentConfig(Scenario(ARUncertainty.from_scalar(u), qz, pt["p"], pt["q"]),
                                       trials=mc.get("trials", 1000), horizon=mc.get("horizon", 200),
                                       seed=mc.get("seed", 0))
                row["mc"] = run_ensemble(cfg).verdict.value
        rows.append(row)
    return rows


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(rows: Iterable[dict], fh: IO[str]):
    rows = list(rows)
    if not rows:
        return
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(list(rows[0]))
    for r in rows:
        w.writerow([_fmt(v) for v in r.values()])
