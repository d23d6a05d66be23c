"""Mean-square stability test for the general-order loop.

The scale recursion of the loop is dominated by the Markov jump system
``z[k+1] = H[Gamma_k] z[k]``, whose mode ``Gamma_k`` is the last ``n``
channel states. Its second moments evolve linearly through the lifted
matrix ``F``; ``rho(F) < 1`` certifies mean-square stability.

Mode encoding: ``Gamma_k = (gamma[k-n+1], ..., gamma[k])`` maps to the
integer with ``gamma[k]`` as least significant bit, so that
``gamma[k-i+1]`` is bit ``i-1``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .channel import make_rng, nu as channel_nu
from .plant import ARUncertainty
from .quantizer import Quantizer

MAX_ORDER = 12
STRICT_MARGIN = 1e-12


class SpectralRadiusError(RuntimeError):
    """Power iteration did not converge; carries the best bracket found."""

    def __init__(self, msg: str, estimate: float, residual: float):
        super().__init__(f"{msg} (estimate={estimate!r}, residual={residual!r})")
        self.estimate = estimate
        self.residual = residual


def w_bar(q: Quantizer, a_star: float, eps: float, b_star: float, delta: float) -> float:
    """Worst expansion of one received cell through the coefficient ``a_i``.

    Counts both the spread of ``A_i * cell`` and the extra spread the
    input uncertainty adds to its midpoint.
    """
    a = abs(a_star)
    d = delta / abs(b_star)
    h = np.asarray(q.boundaries)
    zero_case = eps + delta * a / abs(b_star)
    w0 = 2 * (a + eps) * h[1]
    contains_zero = a <= eps
    if q.odd:
        cells = (a + eps) * (1 + d) * h[2:] - (a - eps) * (1 - d) * h[1:-1]
        w1 = float(cells.max())
        return max(zero_case, w0) if contains_zero else max(w0, w1)
    w1 = float(((a + eps) * (1 + d) * h[1:] - (a - eps) * (1 - d) * h[:-1]).max())
    return zero_case if contains_zero else w1


def w_bars(q: Quantizer, unc: ARUncertainty) -> np.ndarray:
    return np.array([w_bar(q, a, e, unc.b_star, unc.delta) for a, e in zip(unc.a_star, unc.eps)])


def mode_bits(mode: int, n: int) -> list[int]:
    """``[gamma[k], gamma[k-1], ..., gamma[k-n+1]]`` for a mode index."""
    return [(mode >> i) & 1 for i in range(n)]


def mode_index(window: Sequence[int]) -> int:
    """Mode of ``(gamma[k-n+1], ..., gamma[k])``."""
    idx = 0
    for g in window:
        idx = (idx << 1) | int(g)
    return idx


def companion(theta: Sequence[float]) -> np.ndarray:
    """Companion matrix with last row ``(theta_n, ..., theta_1)``."""
    n = len(theta)
    H = np.eye(n, k=1)
    H[-1, :] = theta[::-1]
    return H


def mode_transition_matrix(n: int, p: float, q: float) -> np.ndarray:
    if n == 1:
        return np.array([[1 - q, q], [p, 1 - p]])
    Q = np.array([[1 - q, q, 0.0, 0.0], [0.0, 0.0, p, 1 - p]])
    I = np.eye(2 ** (n - 2))
    return np.kron(np.vstack([I, I]), Q)


def lift(P: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``(P^T kron I) blockdiag(H_i kron H_i)``, assembled blockwise."""
    modes, n, _ = H.shape
    b = n * n
    F = np.zeros((modes * b, modes * b))
    for i in range(modes):
        K = np.kron(H[i], H[i])
        for j in range(modes):
            if P[i, j]:
                F[j * b:(j + 1) * b, i * b:(i + 1) * b] = P[i, j] * K
    return F


class Verdict(enum.Enum):
    STABLE = "stable"
    NOT_CERTIFIED = "not-certified"


@dataclass(frozen=True)
class MssVerdict:
    verdict: Verdict
    rho: float

    @property
    def stable(self) -> bool:
        return self.verdict is Verdict.STABLE


@dataclass(frozen=True)
class MjlsModel:
    order: int
    theta_loss: np.ndarray
    theta_hit: np.ndarray
    H: np.ndarray
    P: np.ndarray
    p: float
    q: float

    @cached_property
    def F(self) -> np.ndarray:
        return lift(self.P, self.H)

    @cached_property
    def rho(self) -> float:
        return spectral_radius(self.F)

    @property
    def n_modes(self) -> int:
        return 2**self.order


def build_model(unc: ARUncertainty, quantizer: Quantizer, p: float, q: float,
                max_order: int = MAX_ORDER) -> MjlsModel:
    n = unc.order
    if n > max_order:
        raise ValueError(f"order {n} exceeds cap {max_order}: F would be {(2**n * n * n)}-dimensional")
    theta_loss = np.abs(np.asarray(unc.a_star)) + np.asarray(unc.eps)
    theta_hit = w_bars(quantizer, unc)
    H = np.empty((2**n, n, n))
    for mode in range(2**n):
        bits = np.array(mode_bits(mode, n), dtype=bool)
        H[mode] = companion(np.where(bits, theta_hit, theta_loss))
    return MjlsModel(n, theta_loss, theta_hit, H, mode_transition_matrix(n, p, q), p, q)


def _dense_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _perron_radius(M, tol, max_iter, restart_every, rng) -> float:
    n = M.shape[0]
    scale = float(M.sum(axis=1).max())
    if scale == 0.0:
        return 0.0
    # shifting by s*I keeps the Perron vector and breaks periodicity
    s = 0.1 * scale
    x = 1.0 + rng.random(n)
    lo = hi = np.nan
    for it in range(1, max_iter + 1):
        y = M @ x
        # components that decayed to zero carry no information about rho
        live = x > 0
        r = y[live] / x[live]
        lo, hi = float(r.min()), float(r.max())
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi)
        x = y + s * x
        if it % restart_every == 0:
            x = x + 1e-3 * x.max() * rng.random(n)
        x /= x.max()
    raise SpectralRadiusError("power iteration did not converge", 0.5 * (lo + hi), hi - lo)


def spectral_radius(M, tol: float = 1e-10, max_iter: int = 20000, restart_every: int = 5000,
                    dense_max_dim: int = 256, seed: int = 0) -> float:
    """Spectral radius of a square matrix.

    Nonnegative matrices go through shifted power iteration with
    Collatz-Wielandt bounds as the stopping rule. Signed matrices, or
    nonnegative ones where the bounds fail to close, fall back to a dense
    eigenvalue solve up to ``dense_max_dim``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ValueError(f"expected a nonempty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    n = M.shape[0]
    if np.all(M >= 0):
        try:
            return _perron_radius(M, tol, max_iter, restart_every, make_rng(seed))
        except SpectralRadiusError:
            if n > dense_max_dim:
                raise
    elif n > dense_max_dim:
        raise SpectralRadiusError("signed matrix too large for the dense fallback", np.nan, np.nan)
    return _dense_radius(M)


def is_mss(model: MjlsModel) -> MssVerdict:
    """Sufficient test only: ``NOT_CERTIFIED`` does not mean unstable for n > 1."""
    rho = model.rho
    return MssVerdict(Verdict.STABLE if rho < 1 - STRICT_MARGIN else Verdict.NOT_CERTIFIED, rho)


@dataclass(frozen=True)
class ScalarDiagnostics:
    nu: Optional[float]
    nu_w_below_one: bool
    mean_sq_below_one: bool
    rho_below_one: bool

    @property
    def agrees(self) -> bool:
        return (self.nu_w_below_one and self.mean_sq_below_one) == self.rho_below_one


def scalar_diagnostics(model: MjlsModel) -> ScalarDiagnostics:
    """The two scalar inequalities equivalent to ``rho(F) < 1`` when n = 1."""
    if model.order != 1:
        raise ValueError("scalar diagnostics need a first-order model")
    A, w = float(model.theta_loss[0]), float(model.theta_hit[0])
    p, q = model.p, model.q
    v = channel_nu(p, q, A) if A > 1 else None
    nu_ok = v is not None and v * w < 1
    mean_ok = ((1 - q) * A * A + (1 - p) * w * w) / 2 <= 1
    return ScalarDiagnostics(v, nu_ok, mean_ok, model.rho < 1)


def mode_path(gammas: Sequence[int], n: int) -> np.ndarray:
    """Modes ``Gamma_0 .. Gamma_{K-1}`` from ``gamma[-n+1] .. gamma[K-1]``."""
    g = np.asarray(gammas, dtype=np.int64)
    K = len(g) - n + 1
    if K < 1:
        raise ValueError(f"need at least {n} channel states")
    modes = np.zeros(K, dtype=np.int64)
    for j in range(n):
        # gamma[k-j] sits at position k+n-1-j and is bit j
        modes |= g[n - 1 - j:n - 1 - j + K] << j
    return modes


def mjls_trajectory(model: MjlsModel, z0: Sequence[float], gammas: Sequence[int]) -> np.ndarray:
    """``z[0] .. z[K]`` driven by the channel states ``gamma[-n+1] .. gamma[K-1]``."""
    z = np.asarray(z0, dtype=float)
    if z.shape != (model.order,):
        raise ValueError(f"z0 must have length {model.order}")
    modes = mode_path(gammas, model.order)
    out = np.empty((len(modes) + 1, model.order))
    out[0] = z
    for k, m in enumerate(modes):
        z = model.H[m] @ z
        out[k + 1] = z
    return out


def sample_modes(model: MjlsModel, start_mode: int, horizon: int, trials: int, seed=None) -> np.ndarray:
    """Markov mode paths drawn from ``P``; shape ``(trials, horizon)``."""
    rng = make_rng(seed)
    cum = np.cumsum(model.P, axis=1)
    modes = np.empty((trials, horizon), dtype=np.int64)
    cur = np.full(trials, start_mode, dtype=np.int64)
    for k in range(horizon):
        modes[:, k] = cur
        u = rng.random(trials)
        cur = np.minimum((u[:, None] >= cum[cur]).sum(axis=1), model.n_modes - 1)
    return modes


def ensemble_second_moment(model: MjlsModel, z0: Sequence[float], modes: np.ndarray) -> np.ndarray:
    """Empirical ``E[z z^T]`` per step over mode paths; shape ``(K+1, n, n)``."""
    trials, K = modes.shape
    z = np.tile(np.asarray(z0, dtype=float), (trials, 1))
    out = np.empty((K + 1, model.order, model.order))
    out[0] = z.T @ z / trials
    for k in range(K):
        z = np.einsum("tij,tj->ti", model.H[modes[:, k]], z)
        out[k + 1] = z.T @ z / trials
    return out


def second_moment_recursion(model: MjlsModel, z0: Sequence[float], start_mode: int, horizon: int) -> np.ndarray:
    """``E[z z^T]`` for ``k = 0..horizon`` propagated through ``F``."""
    n = model.order
    b = n * n
    z0 = np.asarray(z0, dtype=float)
    v = np.zeros(model.n_modes * b)
    v[start_mode * b:(start_mode + 1) * b] = np.outer(z0, z0).reshape(-1, order="F")
    F = model.F
    out = np.empty((horizon + 1, n, n))
    for k in range(horizon + 1):
        out[k] = v.reshape(model.n_modes, b).sum(axis=0).reshape(n, n, order="F")
        v = F @ v
    return out
