import json
import subprocess
import sys

import numpy as np
import pytest

from ncstab.cli import fmt, main
from ncstab.limits import compute_limits
from ncstab.mjls import build_model
from ncstab.plant import ARUncertainty
from ncstab.quantizer import ScalarUncertainty, build_optimal, build_uniform, expansion_rates
from ncstab.sim import ExperimentConfig, Scenario, run_ensemble

FIG2 = ["--a-star", "2", "--b-star", "1", "--p", "0.05", "--q", "0.9"]


def run(capsys, *argv):
    rc = main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


def test_fmt():
    assert fmt(None) == "divergent"
    assert fmt(float("inf")) == "inf"
    assert fmt(1.1180339887) == "1.11803"
    assert fmt(True) == "yes"


def test_limits_example(capsys, tmp_path):
    out_path = tmp_path / "lim.json"
    rc, out, _ = run(capsys, "limits", *FIG2, "--eps", "0", "--delta", "0", "--out", str(out_path))
    assert rc == 0
    assert "nu         1.11803" in out and "R_nec      1.16096 bits" in out
    lim = compute_limits(ScalarUncertainty(2, 0, 1, 0), 0.05, 0.9)
    assert json.loads(out_path.read_text())["r_nec"] == lim.r_nec


def test_limits_divergent_prints_inf(capsys):
    rc, out, _ = run(capsys, "limits", *FIG2, "--eps", "0.5", "--delta", "0.5")
    assert rc == 0 and "R_nec      inf bits" in out


def test_quantizer_example(capsys, tmp_path):
    out_path = tmp_path / "q.json"
    rc, out, _ = run(capsys, "quantizer", "--n", "8", "--a-star", "3", "--eps", "0.5", "--b-star", "1",
                     "--delta", "0", "--out", str(out_path))
    assert rc == 0
    for h in ("0.193131", "0.331081", "0.429617"):
        assert h in out
    u = ScalarUncertainty(3, 0.5, 1, 0)
    qz = build_optimal(8, u)
    assert f"worst-case rate {fmt(float(expansion_rates(qz, u).max()))}" in out
    assert json.loads(out_path.read_text())["boundaries"] == list(qz.boundaries)


def test_mjls_matches_library(capsys, tmp_path):
    dump = tmp_path / "F.csv"
    out_path = tmp_path / "m.json"
    rc, out, _ = run(capsys, "mjls-test", "--a-star", "1.5", "0.2", "--eps", "0.05", "0.02", "--b-star", "1",
                     "--delta", "0.05", "--n", "8", "--kind", "uniform", "--p", "0.05", "--q", "0.9",
                     "--dump-f", str(dump), "--out", str(out_path))
    assert rc == 0
    model = build_model(ARUncertainty((1.5, 0.2), (0.05, 0.02), 1.0, 0.05), build_uniform(8), 0.05, 0.9)
    assert f"rho(F)  {fmt(model.rho)}" in out and "verdict stable" in out
    assert np.array_equal(np.loadtxt(dump, delimiter=","), model.F)
    assert json.loads(out_path.read_text())["rho"] == model.rho


def test_simulate_matches_library(capsys, tmp_path):
    out_path = tmp_path / "ens.csv"
    traj = tmp_path / "traj.csv"
    argv = ["simulate", *FIG2, "--eps", "0.1", "--delta", "0.05", "--q", "0.99", "--n", "4",
            "--trials", "200", "--horizon", "60", "--seed", "4", "--out", str(out_path), "--trajectory", str(traj)]
    rc, out, _ = run(capsys, *argv)
    assert rc == 0
    u = ScalarUncertainty(2, 0.1, 1, 0.05)
    res = run_ensemble(ExperimentConfig(Scenario(ARUncertainty.from_scalar(u), build_optimal(4, u), 0.05, 0.99),
                                        trials=200, horizon=60, seed=4))
    rows = np.loadtxt(out_path, delimiter=",", skiprows=1)
    assert np.array_equal(rows[:, 1], res.mean_sigma_sq)
    assert json.loads(out_path.with_suffix(".json").read_text()) == json.loads(res.to_json())
    assert f"verdict            {res.verdict.value}" in out
    assert traj.read_text().startswith("k,")
    assert len(traj.read_text().splitlines()) == 61


def test_sweep_from_config(capsys, tmp_path):
    cfg = tmp_path / "fig2.toml"
    cfg.write_text('schema_version = 1\n[plant]\na_star = 2.0\nb_star = 1.0\n[channel]\np = 0.05\nq = 0.9\n'
                   '[sweep]\neps = {start = 0.0, stop = 0.5, num = 6}\ndelta = [0.0, 0.25]\n')
    out_path = tmp_path / "fig2.csv"
    rc, out, _ = run(capsys, "sweep", "--config", str(cfg), "--out", str(out_path))
    assert rc == 0 and out.startswith("12 grid points")
    lines = out_path.read_text().splitlines()
    assert lines[0] == "eps,delta,R_nec,q_nec,delta_ok" and len(lines) == 13
    e, d, r = (float(x) for x in lines[4].split(",")[:3])
    assert r == compute_limits(ScalarUncertainty(2, e, 1, d), 0.05, 0.9).r_nec


@pytest.mark.parametrize("argv", [
    ["limits", "--a-star", "2", "--b-star", "1", "--bogus"],
    ["limits", "--b-star", "1"],
    ["nothing"],
    ["limits", *FIG2, "--p", "1.5"],
    ["quantizer", *FIG2, "--n", "1"],
    ["sweep", *FIG2],
    ["simulate", *FIG2, "--policy", "lazy"],
])
def test_config_and_usage_errors_exit_1(capsys, argv):
    rc, _, err = run(capsys, *argv)
    assert rc == 1 and err


def test_bad_schema_version_exits_1(capsys, tmp_path):
    cfg = tmp_path / "x.toml"
    cfg.write_text("schema_version = 7\n")
    rc, _, err = run(capsys, "limits", "--config", str(cfg))
    assert rc == 1 and "schema_version" in err


def test_saturation_exits_2(capsys, tmp_path):
    cfg = tmp_path / "sat.toml"
    cfg.write_text('schema_version = 1\n[plant]\na_star = 2.0\nb_star = 1.0\ny0 = [0.3]\npriors = [[-0.1, 0.1]]\n')
    rc, _, err = run(capsys, "simulate", "--config", str(cfg), "--trials", "5", "--horizon", "10")
    assert rc == 2 and "saturated" in err


def test_unwritable_output_exits_2(capsys, tmp_path):
    rc, _, _ = run(capsys, "limits", *FIG2, "--out", str(tmp_path / "no" / "such" / "file"))
    assert rc == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ncstab", "limits", *FIG2], capture_output=True, text=True)
    assert proc.returncode == 0 and "1.16096" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "ncstab", "limits", "--what"], capture_output=True, text=True)
    assert proc.returncode == 1
