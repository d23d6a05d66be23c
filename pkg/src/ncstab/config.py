"""TOML scenario files.

Example::

    schema_version = 1

    [plant]
    a_star = [2.0]
    eps = [0.1]
    b_star = 1.0
    delta = 0.05
    policy = "nominal"      # nominal | uniform-random | endpoint-random | greedy-adversarial
    y0 = [0.0]              # optional, most recent first

    [channel]
    p = 0.05
    q = 0.9

    [quantizer]
    n_cells = 8
    kind = "optimal"        # optimal (first order only) | uniform
    # boundaries = [...]    # explicit h_0 .. h_m instead of kind

    [experiment]
    trials = 10000
    horizon = 200
    seed = 0

    [sweep]
    eps = {start = 0.0, stop = 0.3, num = 16}
    delta = [0.0, 0.05, 0.1]

Every key has a default except the plant coefficients.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .interval import Interval
from .plant import POLICIES, ARUncertainty
from .quantizer import Quantizer, ScalarUncertainty, build_optimal, build_uniform

SCHEMA_VERSION = 1

DEFAULTS = {
    "p": 0.05,
    "q": 0.9,
    "n_cells": 8,
    "kind": "optimal",
    "policy": "nominal",
    "trials": 1000,
    "horizon": 200,
    "seed": 0,
}

_SECTIONS = {
    "plant": {"a_star", "eps", "b_star", "delta", "policy", "y0", "priors", "seed", "order"},
    "channel": {"p", "q"},
    "quantizer": {"n_cells", "kind", "boundaries"},
    "experiment": {"trials", "horizon", "seed", "dead_band", "fit_fraction"},
    "sweep": {"eps", "delta", "p", "q", "n_cells", "mc"},
}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    a_star: Optional[list[float]] = None
    eps: Optional[list[float]] = None
    b_star: Optional[float] = None
    delta: Optional[float] = None
    policy: str = DEFAULTS["policy"]
    y0: Optional[list[float]] = None
    priors: Optional[list[tuple[float, float]]] = None
    p: float = DEFAULTS["p"]
    q: float = DEFAULTS["q"]
    n_cells: int = DEFAULTS["n_cells"]
    kind: str = DEFAULTS["kind"]
    boundaries: Optional[list[float]] = None
    trials: int = DEFAULTS["trials"]
    horizon: int = DEFAULTS["horizon"]
    seed: int = DEFAULTS["seed"]
    dead_band: float = 0.01
    fit_fraction: float = 0.5
    sweep: dict[str, Any] = field(default_factory=dict)

    def override(self, **kw) -> "Config":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # ---- builders; every failure here is a configuration error

    def uncertainty(self) -> ARUncertainty:
        missing = [k for k in ("a_star", "b_star") if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"missing plant parameter(s): {', '.join(missing)}")
        eps = self.eps if self.eps is not None else [0.0] * len(self.a_star)
        try:
            return ARUncertainty(tuple(self.a_star), tuple(eps), self.b_star, self.delta or 0.0)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def scalar(self) -> ScalarUncertainty:
        unc = self.uncertainty()
        if unc.order != 1:
            raise ConfigError("this command needs a first-order plant")
        try:
            return unc.scalar()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def quantizer(self) -> Quantizer:
        try:
            if self.boundaries is not None:
                return Quantizer(int(self.n_cells), tuple(self.boundaries))
            if self.kind == "uniform":
                return build_uniform(int(self.n_cells))
            if self.kind == "optimal":
                unc = self.uncertainty()
                if unc.order != 1:
                    raise ConfigError("the optimal quantizer is defined for first-order plants; use kind = \"uniform\"")
                return build_optimal(int(self.n_cells), unc.scalar())
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from e
        raise ConfigError(f"unknown quantizer kind {self.kind!r}")

    def prior_intervals(self) -> Optional[tuple[Interval, ...]]:
        if self.priors is None:
            return None
        try:
            return tuple(Interval(lo, hi) for lo, hi in self.priors)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad priors: {e}") from e

    def scenario(self):
        from .sim import Scenario

        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        check_channel(self.p, self.q)
        try:
            return Scenario(self.uncertainty(), self.quantizer(), self.p, self.q, self.policy,
                            self.prior_intervals(), None if self.y0 is None else tuple(self.y0))
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def experiment(self):
        from .sim import ExperimentConfig

        try:
            return ExperimentConfig(self.scenario(), int(self.trials), int(self.horizon), int(self.seed),
                                    self.dead_band, self.fit_fraction)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def sweep_axes(self) -> tuple[dict, Optional[dict]]:
        if not self.sweep:
            raise ConfigError("no [sweep] section")
        axes = {}
        mc = None
        for name, spec in self.sweep.items():
            if name == "mc":
                mc = dict(spec)
                continue
            axes[name] = _axis(name, spec)
        if not axes:
            raise ConfigError("[sweep] defines no axis")
        return axes, mc


def check_channel(p: float, q: float):
    if not (0 <= p < 1 and 0 < q <= 1):
        raise ConfigError(f"need 0 <= p < 1 and 0 < q <= 1, got p={p}, q={q}")


def _axis(name: str, spec) -> list[float]:
    if isinstance(spec, dict):
        try:
            vals = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"sweep axis {name!r} needs start, stop and num") from e
        vals = vals.tolist()
    elif isinstance(spec, list):
        vals = [float(v) for v in spec]
    else:
        vals = [float(spec)]
    if name == "n_cells":
        vals = [int(v) for v in vals]
    if not vals or any(isinstance(v, float) and not math.isfinite(v) for v in vals):
        raise ConfigError(f"sweep axis {name!r} is empty or not finite")
    return vals


def _listify(v):
    return [float(x) for x in v] if isinstance(v, list) else [float(v)]


def from_dict(doc: dict) -> Config:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    extra = set(doc) - set(_SECTIONS) - {"schema_version"}
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    kw: dict[str, Any] = {}
    for sec, keys in _SECTIONS.items():
        body = doc.get(sec, {})
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        bad = set(body) - keys
        if bad:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(bad))}")
        if sec == "sweep":
            kw["sweep"] = dict(body)
            continue
        for k, v in body.items():
            if k == "order":
                continue
            kw[k] = v
    for k in ("a_star", "eps", "y0"):
        if k in kw:
            kw[k] = _listify(kw[k])
    if "order" in doc.get("plant", {}) and "a_star" in kw and doc["plant"]["order"] != len(kw["a_star"]):
        raise ConfigError("plant.order does not match the length of a_star")
    try:
        return Config(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load(path) -> Config:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return from_dict(doc)
