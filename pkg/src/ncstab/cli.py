"""Command line front end.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
(quantizer saturation, spectral radius iteration not converging).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import DEFAULTS, Config, ConfigError, check_channel, load
from .limits import compute_limits
from .mjls import SpectralRadiusError, build_model, is_mss, scalar_diagnostics
from .quantizer import SaturationError, expansion_rates
from .sim import make_loop, run_ensemble, sweep, write_rows_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors exit with 1 like any other bad input
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def fmt(x) -> str:
    """Six significant digits for human output."""
    if x is None:
        return "divergent"
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{float(x):.6g}"
    return str(x)


def _scenario_flags(p: argparse.ArgumentParser, vector: bool):
    g = p.add_argument_group("plant and channel (override the config file)")
    nargs = "+" if vector else None
    g.add_argument("--a-star", type=float, nargs=nargs, help="nominal AR coefficient(s), most recent lag first")
    g.add_argument("--eps", type=float, nargs=nargs, help="half-width of the a interval(s) (default 0)")
    g.add_argument("--b-star", type=float, help="nominal input coefficient")
    g.add_argument("--delta", type=float, help="half-width of the b interval (default 0)")
    g.add_argument("--p", type=float, help=f"failure probability (default {DEFAULTS['p']})")
    g.add_argument("--q", type=float, help=f"recovery probability (default {DEFAULTS['q']})")


def _quantizer_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("quantizer")
    g.add_argument("--n", type=int, dest="n_cells", help=f"number of cells (default {DEFAULTS['n_cells']})")
    g.add_argument("--kind", choices=("optimal", "uniform"),
                   help="optimal needs a first-order plant (default optimal)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ncstab", description="Stabilization limits, quantizers, MJLS tests and simulations.")
    ap.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML scenario file (schema_version = 1)")
    common.add_argument("--seed", type=int, help=f"master seed (default {DEFAULTS['seed']})")
    common.add_argument("--out", type=Path, help="write machine-readable output here")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("limits", parents=[common], help="scalar rate, loss and uncertainty limits")
    _scenario_flags(p, vector=False)

    p = sub.add_parser("quantizer", parents=[common], help="build a quantizer and list its expansion rates")
    _scenario_flags(p, vector=False)
    _quantizer_flags(p)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo ensemble of the closed loop")
    _scenario_flags(p, vector=True)
    _quantizer_flags(p)
    p.add_argument("--policy", help=f"perturbation policy (default {DEFAULTS['policy']})")
    p.add_argument("--trials", type=int, help=f"number of trials (default {DEFAULTS['trials']})")
    p.add_argument("--horizon", type=int, help=f"steps per trial (default {DEFAULTS['horizon']})")
    p.add_argument("--trajectory", type=Path, help="also write trial 0 step by step to this CSV")

    p = sub.add_parser("mjls-test", parents=[common], help="mean-square stability test of the MJLS bound")
    _scenario_flags(p, vector=True)
    _quantizer_flags(p)
    p.add_argument("--dump-f", type=Path, help="write the lifted matrix F as dense CSV")

    p = sub.add_parser("sweep", parents=[common], help="limits (and optional verdicts) over a grid")
    _scenario_flags(p, vector=False)
    return ap


def _config(args) -> Config:
    cfg = load(args.config) if args.config else Config()
    as_list = lambda v: None if v is None else (v if isinstance(v, list) else [v])
    cfg = cfg.override(
        a_star=as_list(args.a_star), eps=as_list(getattr(args, "eps", None)), b_star=args.b_star,
        delta=args.delta, p=args.p, q=args.q, seed=args.seed,
        n_cells=getattr(args, "n_cells", None), kind=getattr(args, "kind", None),
        policy=getattr(args, "policy", None), trials=getattr(args, "trials", None),
        horizon=getattr(args, "horizon", None),
    )
    if getattr(args, "n_cells", None) is not None or getattr(args, "kind", None) is not None:
        # a quantizer given on the command line replaces explicit boundaries
        cfg.boundaries = None
    return cfg


def _write(path: Optional[Path], text: str):
    if path is not None:
        path.write_text(text)


def cmd_limits(cfg: Config, args) -> int:
    u = cfg.scalar()
    check_channel(cfg.p, cfg.q)
    lim = compute_limits(u, cfg.p, cfg.q)
    print(f"plant      a*={fmt(u.a_star)} eps={fmt(u.eps)} b*={fmt(u.b_star)} delta={fmt(u.delta)}")
    print(f"channel    p={fmt(cfg.p)} q={fmt(cfg.q)}")
    print(f"nu         {fmt(lim.nu)}")
    print(f"Delta      {fmt(lim.delta_total)}  (< 1: {fmt(lim.delta_ok)})")
    print(f"q_nec      {fmt(lim.q_nec)}  (q > q_nec: {fmt(lim.q_ok)})")
    print(f"R_nec      {fmt(lim.r_nec)} bits")
    print(f"N_nec      even {fmt(lim.n_nec_even)}, odd {fmt(lim.n_nec_odd)}")
    print(f"min even N {fmt(lim.min_even_n)}")
    _write(args.out, json.dumps(_jsonable(lim.as_dict()), indent=2) + "\n")
    return 0


def cmd_quantizer(cfg: Config, args) -> int:
    u = cfg.scalar()
    qz = cfg.quantizer()
    w = expansion_rates(qz, u)
    print(f"N = {qz.n_cells} ({'odd' if qz.odd else 'even'}), m = {qz.m}")
    print("l  h_l       w_l")
    for l, h in enumerate(qz.boundaries):
        print(f"{l:<2} {fmt(h):<9} {fmt(float(w[l])) if l < len(w) else ''}".rstrip())
    print(f"worst-case rate {fmt(float(w.max()))}")
    _write(args.out, qz.to_json(indent=2) + "\n")
    return 0


def cmd_simulate(cfg: Config, args) -> int:
    exp = cfg.experiment()
    res = run_ensemble(exp)
    s = res.summary()
    print(f"trials {exp.trials}, horizon {exp.horizon}, seed {exp.seed}, policy {exp.scenario.policy}")
    print(f"verdict            {s['verdict']}")
    print(f"rate per step      {fmt(s['rate_per_step'])}  (log2 {fmt(s['log2_rate_per_step'])})")
    print(f"rate per arrival   {fmt(s['arrival_rate'])}  over {s['arrivals_fitted']} arrivals")
    print(f"final E[sigma^2]   {fmt(float(res.mean_sigma_sq[-1]))}")
    if args.out is not None:
        with open(args.out, "w", newline="") as fh:
            res.to_csv(fh)
        args.out.with_suffix(".json").write_text(res.to_json(indent=2) + "\n")
    if args.trajectory is not None:
        tr = make_loop(exp.scenario, exp.seed, 0).run(exp.horizon)
        with open(args.trajectory, "w", newline="") as fh:
            tr.to_csv(fh)
    return 0


def cmd_mjls(cfg: Config, args) -> int:
    unc = cfg.uncertainty()
    qz = cfg.quantizer()
    check_channel(cfg.p, cfg.q)
    model = build_model(unc, qz, cfg.p, cfg.q)
    v = is_mss(model)
    print(f"order {model.order}, modes {model.n_modes}, dim F {model.F.shape[0]}")
    print("i  theta_loss  theta_hit")
    for i, (tl, th) in enumerate(zip(model.theta_loss, model.theta_hit), start=1):
        print(f"{i:<2} {fmt(float(tl)):<11} {fmt(float(th))}")
    print(f"rho(F)  {fmt(v.rho)}")
    print(f"verdict {v.verdict.value}")
    if model.order == 1:
        d = scalar_diagnostics(model)
        print(f"nu*w_bar < 1: {fmt(d.nu_w_below_one)}, second-moment trace < 1: {fmt(d.mean_sq_below_one)}")
    if args.out is not None:
        args.out.write_text(json.dumps({
            "rho": v.rho, "verdict": v.verdict.value,
            "theta_loss": model.theta_loss.tolist(), "theta_hit": model.theta_hit.tolist(),
        }, indent=2) + "\n")
    if args.dump_f is not None:
        np.savetxt(args.dump_f, model.F, delimiter=",", fmt="%.17g")
    return 0


def cmd_sweep(cfg: Config, args) -> int:
    axes, mc = cfg.sweep_axes()
    u = cfg.scalar()
    check_channel(cfg.p, cfg.q)
    base = {"a_star": u.a_star, "b_star": u.b_star, "eps": u.eps, "delta": u.delta, "p": cfg.p, "q": cfg.q}
    if mc is not None:
        mc.setdefault("seed", cfg.seed)
    try:
        rows = sweep(base, axes, mc)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    finite = sum(math.isfinite(r["R_nec"]) for r in rows)
    print(f"{len(rows)} grid points over {', '.join(axes)}; R_nec finite at {finite}")
    if args.out is not None:
        with open(args.out, "w", newline="") as fh:
            write_rows_csv(rows, fh)
    else:
        write_rows_csv(rows, sys.stdout)
    return 0


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            v = "inf" if v > 0 else ("-inf" if v < 0 else "nan")
        out[k] = v
    return out


COMMANDS = {
    "limits": cmd_limits,
    "quantizer": cmd_quantizer,
    "simulate": cmd_simulate,
    "mjls-test": cmd_mjls,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (SaturationError, SpectralRadiusError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
