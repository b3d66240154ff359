import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from simbacl import io
from simbacl.errors import ConfigError, DataError, NegativeRateError
from simbacl.models import SIS, SINR, make_model


@given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(-1, 1)))
def test_observation_round_trip(tmp_path_factory, y):
    path = tmp_path_factory.mktemp("io") / "obs.csv"
    io.write_observations(path, y)
    assert np.array_equal(io.read_observations(path), y)


def test_single_cell_and_na(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("NA\n")
    assert io.read_observations(p).tolist() == [[-1]]
    io.write_observations(p, np.array([[1]]))
    assert p.read_text() == "1\n"


def test_read_matrix_diagnostics(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0,1\n0,x\n")
    with pytest.raises(DataError, match="line 2, column 2"):
        io.read_matrix(p)
    p.write_text("0,1\n0\n")
    with pytest.raises(DataError, match="line 2 has 1 columns"):
        io.read_matrix(p)
    p.write_text("0,1\n")
    with pytest.raises(DataError, match="expected N = 3"):
        io.read_observations(p, SIS(3))
    with pytest.raises(DataError):
        io.read_matrix(tmp_path / "missing.csv")


def test_trajectory_rejects_na(tmp_path):
    p = tmp_path / "traj.csv"
    p.write_text("0,NA\n")
    with pytest.raises(DataError):
        io.read_trajectory(p)
    with pytest.raises(DataError):
        io.write_trajectory(p, np.array([[0, -1]]))


@pytest.mark.parametrize("name", ["sis", "sis_spatial", "sinr"])
def test_covariate_round_trip(tmp_path, name):
    m = make_model(name, 5, seed=2)
    p = tmp_path / "cov.csv"
    io.write_covariates(p, m.covariates, name)
    back = io.read_covariates(p, name)
    for attr in ("w", "coords", "cattle", "sheep"):
        a, b = getattr(m.covariates, attr), getattr(back, attr)
        assert (a is None and b is None) or np.array_equal(a, b)


def test_covariates_missing_column(tmp_path):
    p = tmp_path / "cov.csv"
    p.write_text("w1\n1.0\n")
    with pytest.raises(DataError, match="missing covariate columns"):
        io.read_covariates(p, "sis")


def test_config_defaults_and_errors(tmp_path):
    cfg = io.parse_config({"model": "sis", "N": 4, "T": 3, "params": {"iota": [0.01]}})
    assert cfg.params["iota"][0] == 0.01
    assert np.allclose(cfg.params["beta_lambda"], [-1.0, 2.0])
    top = io.parse_config({"model": "sis", "N": 4, "q": [0.5, 0.5]})
    assert np.allclose(top.params["q"], [0.5, 0.5])
    with pytest.raises(ConfigError):
        io.parse_config({"model": "sis", "N": 4, "bogus": 1})
    with pytest.raises(ConfigError):
        io.parse_config({"model": "sir", "N": 4})
    with pytest.raises(ConfigError):
        io.parse_config({"model": "sis", "N": 0})
    with pytest.raises(NegativeRateError):
        io.parse_config({"model": "sis", "N": 4, "iota": [-1.0]})
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="line 1"):
        io.load_config(p)


def test_config_with_covariate_file(tmp_path):
    m = SINR(4, seed=3)
    io.write_covariates(tmp_path / "farms.csv", m.covariates, "sinr")
    (tmp_path / "c.json").write_text(json.dumps({"model": "sinr", "N": 4, "covariates": "farms.csv"}))
    cfg = io.load_config(tmp_path / "c.json")
    assert np.array_equal(cfg.build_model().covariates.coords, m.covariates.coords)
    (tmp_path / "c.json").write_text(json.dumps({"model": "sinr", "N": 5, "covariates": "farms.csv"}))
    with pytest.raises(DataError, match="expected N = 5"):
        io.load_config(tmp_path / "c.json")


def test_tables_json_and_dump(tmp_path):
    io.write_table(tmp_path / "t.csv", ("a", "b", "c"), [{"a": 1, "b": 0.1, "c": True}, (2, 1e-300, False)])
    rows = io.read_table(tmp_path / "t.csv")
    assert rows[0] == {"a": "1", "b": "0.1", "c": "1"} and float(rows[1]["b"]) == 1e-300
    io.write_json(tmp_path / "j.json", {"x": np.float64(-np.inf), "y": np.arange(2), "z": np.bool_(True)})
    assert io.read_json(tmp_path / "j.json") == {"x": "-inf", "y": [0, 1], "z": True}
    io.write_evaluation_dump(tmp_path / "e.csv", np.array([[-1.0, -2.0]]))
    assert (tmp_path / "e.csv").read_text().splitlines() == ["simulation_index,block_id,log_lik",
                                                            "0,0,-1.0", "0,1,-2.0"]


def test_manifest_round_trip(tmp_path):
    man = io.RunManifest("loglik", ["loglik"], {}, {"seed": 1}, ["loglik.json"], 0.5)
    path = io.write_manifest(tmp_path, man)
    doc = io.read_manifest(path)
    assert doc["command"] == "loglik" and doc["seeds"] == {"seed": 1}
    path.write_text("{}")
    with pytest.raises(ConfigError):
        io.read_manifest(path)
