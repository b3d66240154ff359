import json
import subprocess
import sys

import numpy as np
import pytest

from simbacl import cli, io


def write_config(path, **doc):
    base = {"model": "sis", "N": 6, "T": 5, "iota": [0.05]}
    base.update(doc)
    path.write_text(json.dumps(base))
    return str(path)


@pytest.fixture
def sim(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "sim"
    assert cli.main(["--seed", "3", "--out-dir", str(out), "simulate", "--config", cfg]) == 0
    return tmp_path, cfg, str(out / "observations.csv")


def test_simulate_outputs(sim):
    tmp, cfg, obs = sim
    y = io.read_observations(obs)
    assert y.shape == (5, 6)
    x = io.read_trajectory(tmp / "sim" / "trajectory.csv")
    assert x.shape == (6, 6)
    man = io.read_manifest(tmp / "sim" / "manifest.json")
    assert man["seeds"]["seed"] == 3
    assert set(man["outputs"]) == {"trajectory.csv", "observations.csv", "covariates.csv"}


def test_loglik_and_replay_byte_identical(sim, capsys):
    tmp, cfg, obs = sim
    out = tmp / "ll"
    assert cli.main(["--out-dir", str(out), "loglik", "--config", cfg, "--obs", obs, "--P", "7"]) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert np.isfinite(report["composite_loglik"]) and report["P"] == 7
    rows = io.read_table(out / "evaluation.csv")
    assert len(rows) == 7 * 6
    cli.replay(out / "manifest.json", tmp / "again")
    for name in ("loglik.json", "evaluation.csv"):
        assert (out / name).read_bytes() == (tmp / "again" / name).read_bytes()


def test_fit_then_godambe(sim):
    tmp, cfg, obs = sim
    out = str(tmp / "fit")
    assert cli.main(["--out-dir", out, "fit", "--config", cfg, "--obs", obs, "--free", "beta_lambda",
                     "--steps", "3", "--P", "3"]) == 0
    fit = io.read_json(tmp / "fit" / "fit.json")
    assert len(fit["theta_hat"]) == 2 and len(fit["trace"]) == 3
    assert cli.main(["--out-dir", out, "godambe", "--config", cfg, "--obs", obs, "--free", "beta_lambda",
                     "--theta-from", str(tmp / "fit" / "fit.json"), "--B", "3", "--P", "3"]) == 0
    g = io.read_json(tmp / "fit" / "godambe.json")
    assert np.array(g["G"]).shape == (2, 2)
    assert np.allclose(g["theta"], fit["theta_hat"])


def test_surface_kl_oracle_compare(sim):
    tmp, cfg, obs = sim
    out = str(tmp / "misc")
    assert cli.main(["--out-dir", out, "surface", "--config", cfg, "--obs", obs, "--param", "q",
                     "--grid-a", "0.4:0.8:3", "--grid-b", "0.3,0.5", "--P", "3"]) == 0
    assert len(io.read_table(tmp / "misc" / "surface.csv")) == 6
    assert cli.main(["--out-dir", out, "kl", "--config", cfg, "--E", "2", "--P", "3",
                     "--q-variant", "feedback"]) == 0
    assert io.read_json(tmp / "misc" / "kl.json")["kl"] == 0.0
    small = write_config(tmp / "small.json", N=2)
    (tmp / "o.csv").write_text("1,NA\n0,0\n")
    assert cli.main(["--out-dir", out, "oracle", "--config", small, "--obs", str(tmp / "o.csv"),
                     "--block", "0"]) == 0
    assert np.isfinite(io.read_json(tmp / "misc" / "oracle.json")["exact_block_marginal"])
    assert cli.main(["--out-dir", out, "compare-smc", "--config", cfg, "--obs", obs, "--particles", "10",
                     "--reps", "2"]) == 0
    rows = io.read_table(tmp / "misc" / "comparison.csv")
    assert len(rows) == 4 * 2 and set(rows[0]) == {"method", "n_particles", "rep", "loglik",
                                                   "wall_time_ms", "failed"}


def test_gaussian_coverage_cli(tmp_path):
    assert cli.main(["--out-dir", str(tmp_path), "coverage", "--gaussian", "--reps", "200"]) == 0
    cov = io.read_json(tmp_path / "coverage.json")
    assert abs(cov["joint"]["known"] - 0.95) < 0.06


def test_single_cell_problem(tmp_path):
    cfg = write_config(tmp_path / "c.json", N=1, T=1)
    (tmp_path / "y.csv").write_text("1\n")
    assert cli.main(["--out-dir", str(tmp_path), "loglik", "--config", cfg, "--obs", str(tmp_path / "y.csv"),
                     "--variant", "feedback", "--P", "2"]) == 0
    rep = io.read_json(tmp_path / "loglik.json")
    exact = cli.main(["--out-dir", str(tmp_path), "oracle", "--config", cfg, "--obs", str(tmp_path / "y.csv")])
    assert exact == 0
    assert rep["composite_loglik"] == pytest.approx(io.read_json(tmp_path / "oracle.json")["exact_loglik"],
                                                    abs=1e-12)


def test_pairs_partition_blocks(sim):
    tmp, cfg, obs = sim
    assert cli.main(["--out-dir", str(tmp), "loglik", "--config", cfg, "--obs", obs, "--partition", "pairs",
                     "--P", "2"]) == 0
    assert io.read_json(tmp / "loglik.json")["blocks"] == 3


@pytest.mark.parametrize("doc,code,tag", [
    ({"iota": [-0.1]}, 2, "negative_rate"),
    ({"q": [0.2, 1.2]}, 2, "probability_range"),
    ({"extra": 1}, 2, "config"),
])
def test_config_exit_codes(tmp_path, capsys, doc, code, tag):
    cfg = write_config(tmp_path / "c.json", **doc)
    assert cli.main(["--out-dir", str(tmp_path), "simulate", "--config", cfg]) == code
    assert f"[{tag}]" in capsys.readouterr().err


def test_partition_data_numerical_capacity_codes(sim, capsys):
    tmp, cfg, obs = sim
    base = ["--out-dir", str(tmp / "err"), "loglik", "--config", cfg, "--obs", obs, "--P", "2"]
    assert cli.main(base + ["--partition", "0,1;1,2,3,4,5"]) == 2
    assert "[partition_overlap]" in capsys.readouterr().err
    assert cli.main(base + ["--partition", "0,1;2"]) == 2
    assert "[partition_cover]" in capsys.readouterr().err
    odd = write_config(tmp / "odd.json", N=5)
    (tmp / "y5.csv").write_text("0,0,0,0,0\n")
    assert cli.main(["--out-dir", str(tmp), "loglik", "--config", odd, "--obs", str(tmp / "y5.csv"),
                     "--partition", "pairs"]) == 2
    (tmp / "bad.csv").write_text("0,0\n")
    assert cli.main(["--out-dir", str(tmp), "loglik", "--config", cfg, "--obs", str(tmp / "bad.csv")]) == 3
    assert "[data]" in capsys.readouterr().err
    zero = write_config(tmp / "zero.json", q=[0.0, 0.0])
    (tmp / "hit.csv").write_text("1,0,0,0,0,0\n")
    assert cli.main(["--out-dir", str(tmp), "loglik", "--config", zero, "--obs", str(tmp / "hit.csv"),
                     "--P", "2"]) == 4
    assert "[numerical]" in capsys.readouterr().err
    big = write_config(tmp / "big.json", model="seir", N=14, iota=[0.001])
    (tmp / "y14.csv").write_text(",".join(["0"] * 14) + "\n")
    assert cli.main(["--out-dir", str(tmp), "loglik", "--config", big, "--obs", str(tmp / "y14.csv"),
                     "--partition", "whole"]) == 5
    assert "[capacity]" in capsys.readouterr().err


def test_threads_validation_and_console_script(tmp_path):
    assert cli.main(["--threads", "0", "coverage", "--gaussian", "--reps", "2"]) == 2
    proc = subprocess.run([sys.executable, "-m", "simbacl.cli", "--out-dir", str(tmp_path), "coverage",
                           "--gaussian", "--reps", "5"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
