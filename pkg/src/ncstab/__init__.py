"""Stabilization of uncertain autoregressive plants over a lossy, rate-limited link."""
from .channel import GilbertElliott, make_rng
from .interval import Interval
from .limits import ScalarLimits, compute_limits, is_stabilizable
from .loop import ClosedLoop, LoopState
from .mjls import build_model, is_mss, spectral_radius
from .plant import ARUncertainty, PerturbationPolicy, Plant
from .quantizer import Quantizer, SaturationError, ScalarUncertainty, build_optimal, build_uniform, quantize
from .sim import ExperimentConfig, Scenario, run_ensemble, sweep

__version__ = "0.1.0"
