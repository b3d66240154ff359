"""Plain-text formats: observation/trajectory/covariate CSVs, JSON configs,
evaluation dumps, result tables and run manifests.

Observation and trajectory files are bare integer matrices (one row per time
step, one column per component, no header).  ``NA`` marks a missing
observation and is read back as ``-1``.  Floats are written with ``repr`` so
files round-trip exactly and re-runs are byte-identical.
"""
from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError
from .models import MODELS, Covariates, make_model
from .parameters import check_block

NA = "NA"


# integer matrices ----------------------------------------------------------------

def write_matrix(path, arr):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DataError(f"expected a 2-d array, got shape {arr.shape}")
    with open(path, "w", newline="") as fh:
        for row in arr:
            fh.write(",".join(NA if v < 0 else str(int(v)) for v in row) + "\n")


def read_matrix(path, n_cols=None, n_rows=None, what="observation"):
    """Integer matrix with ``NA`` -> -1; shape checks name expected/actual sizes."""
    try:
        with open(path, newline="") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read {what} file {path}: {exc}") from exc
    rows = []
    for i, ln in enumerate(lines, start=1):
        out = []
        for j, tok in enumerate(ln.split(","), start=1):
            tok = tok.strip()
            if tok == NA:
                out.append(-1)
                continue
            try:
                out.append(int(tok))
            except ValueError:
                raise DataError(f"{path}: line {i}, column {j}: not an integer or {NA}: {tok!r}") from None
        if rows and len(out) != len(rows[0]):
            raise DataError(f"{path}: line {i} has {len(out)} columns, expected {len(rows[0])}")
        rows.append(out)
    if not rows:
        raise DataError(f"{path}: empty {what} file")
    arr = np.array(rows, dtype=np.int64)
    if n_cols is not None and arr.shape[1] != n_cols:
        raise DataError(f"{path}: {what} file has {arr.shape[1]} columns, expected N = {n_cols}")
    if n_rows is not None and arr.shape[0] != n_rows:
        raise DataError(f"{path}: {what} file has {arr.shape[0]} rows, expected {n_rows}")
    return arr


def write_observations(path, y):
    write_matrix(path, y)


def read_observations(path, model=None, T=None):
    y = read_matrix(path, None if model is None else model.n_components, T, "observation")
    return y if model is None else model.check_observations(y)


def write_trajectory(path, states):
    states = np.asarray(states)
    if np.any(states < 0):
        raise DataError("latent states must be nonnegative")
    write_matrix(path, states)


def read_trajectory(path, model=None):
    x = read_matrix(path, None if model is None else model.n_components, None, "trajectory")
    if np.any(x < 0):
        raise DataError(f"{path}: trajectory contains {NA}")
    return x if model is None else model.check_states(x)


# covariates -----------------------------------------------------------------------

COVARIATE_COLUMNS = {
    "sis": ("w1", "w2"),
    "seir": ("w1", "w2"),
    "sis_spatial": ("w1", "w2", "x_km", "y_km"),
    "sinr": ("x_km", "y_km", "cattle", "sheep"),
}


def write_covariates(path, cov: Covariates, model_name):
    cols = COVARIATE_COLUMNS[model_name]
    data = {}
    if cov.w is not None:
        data["w1"], data["w2"] = cov.w[:, 0], cov.w[:, 1]
    if cov.coords is not None:
        data["x_km"], data["y_km"] = cov.coords[:, 0], cov.coords[:, 1]
    if cov.cattle is not None:
        data["cattle"], data["sheep"] = cov.cattle, cov.sheep
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for i in range(len(cov)):
            wr.writerow([repr(float(data[c][i])) for c in cols])


def read_covariates(path, model_name) -> Covariates:
    if model_name not in COVARIATE_COLUMNS:
        raise ConfigError(f"model {model_name!r} takes no covariate file")
    need = COVARIATE_COLUMNS[model_name]
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read covariate file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty covariate file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in need if c not in header]
    if missing:
        raise DataError(f"{path}: missing covariate columns {missing}; header is {header}")
    idx = {c: header.index(c) for c in need}
    vals = {c: [] for c in need}
    for i, row in enumerate(rows[1:], start=2):
        if not any(x.strip() for x in row):
            continue
        for c in need:
            try:
                vals[c].append(float(row[idx[c]]))
            except (ValueError, IndexError):
                raise DataError(f"{path}: line {i}, column {c!r}: not a number") from None
    arr = {c: np.array(v) for c, v in vals.items()}
    kw = {}
    if "w1" in arr:
        kw["w"] = np.column_stack([arr["w1"], arr["w2"]])
    if "x_km" in arr:
        kw["coords"] = np.column_stack([arr["x_km"], arr["y_km"]])
    if "cattle" in arr:
        kw["cattle"], kw["sheep"] = arr["cattle"], arr["sheep"]
    return Covariates(**kw)


# configuration ----------------------------------------------------------------------

@dataclass
class RunConfig:
    """Model name, sizes and natural-scale parameter blocks."""
    model_name: str
    N: int
    T: int | None
    params: dict
    covariates_path: str | None = None
    covariate_seed: int = 0
    raw: dict = field(default_factory=dict)

    def build_model(self):
        cov = None
        if self.covariates_path is not None:
            cov = read_covariates(self.covariates_path, self.model_name)
            if len(cov) != self.N:
                raise DataError(f"covariate file has {len(cov)} rows, expected N = {self.N}")
        return make_model(self.model_name, self.N, covariates=cov, seed=self.covariate_seed)

    def to_dict(self):
        out = {"model": self.model_name, "N": self.N, "T": self.T,
               "params": {k: np.asarray(v).tolist() for k, v in self.params.items()}}
        if self.covariates_path is not None:
            out["covariates"] = self.covariates_path
        out["covariate_seed"] = self.covariate_seed
        return out


_CONFIG_KEYS = {"model", "N", "T", "params", "covariates", "covariate_seed"}


def parse_config(doc, base_dir=None) -> RunConfig:
    """Validate a config document.

    Parameter blocks may sit under ``params`` or at top level; blocks that
    are not given take the model's baseline values.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    name = doc.get("model")
    if name not in MODELS:
        raise ConfigError(f"field 'model': expected one of {sorted(MODELS)}, got {name!r}")
    try:
        N = int(doc["N"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("field 'N': required positive integer") from None
    if N < 1:
        raise ConfigError(f"field 'N': must be positive, got {N}")
    T = doc.get("T")
    if T is not None:
        try:
            T = int(T)
        except (TypeError, ValueError):
            raise ConfigError(f"field 'T': not an integer: {T!r}") from None
        if T < 1:
            raise ConfigError(f"field 'T': must be positive, got {T}")
    cov_path = doc.get("covariates")
    if cov_path is not None and base_dir is not None and not os.path.isabs(cov_path):
        cov_path = str(Path(base_dir) / cov_path)
    cseed = int(doc.get("covariate_seed", 0))
    cfg = RunConfig(name, N, T, {}, cov_path, cseed, dict(doc))
    model = cfg.build_model()
    names = {b.name: b for b in model.layout}
    given = dict(doc.get("params") or {})
    for k, v in doc.items():
        if k in _CONFIG_KEYS:
            continue
        if k not in names:
            raise ConfigError(f"unknown config field {k!r}")
        given[k] = v
    params = model.baseline()
    for k, v in given.items():
        if k not in names:
            raise ConfigError(f"params: unknown parameter block {k!r} for model {name!r}")
        params[k] = check_block(names[k], v)
    model.check_params(params)
    cfg.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(doc, Path(path).parent)


# results ----------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            cells = [r[h] for h in header] if isinstance(r, dict) else r
            wr.writerow([_cell(v) for v in cells])


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_evaluation_dump(path, block_logliks, block_ids=None):
    """(simulation_index, block_id, log_lik) for a (P, |K|) array."""
    ll = np.asarray(block_logliks, dtype=float)
    ids = range(ll.shape[1]) if block_ids is None else block_ids
    rows = [(p, k, ll[p, j]) for p in range(ll.shape[0]) for j, k in enumerate(ids)]
    write_table(path, ("simulation_index", "block_id", "log_lik"), rows)


# manifests --------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: dict
    outputs: list
    wall_time_s: float
    code_version: str = __version__

    def to_dict(self):
        return {"command": self.command, "argv": list(self.argv), "config": self.config,
                "seeds": self.seeds, "outputs": list(self.outputs), "wall_time_s": self.wall_time_s,
                "code_version": self.code_version, "python": platform.python_version(),
                "numpy": np.__version__}


def write_manifest(out_dir, manifest: RunManifest, name="manifest.json"):
    path = Path(out_dir) / name
    write_json(path, manifest.to_dict())
    return path


def read_manifest(path) -> dict:
    try:
        doc = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    for k in ("command", "argv", "outputs"):
        if k not in doc:
            raise ConfigError(f"manifest {path} lacks field {k!r}")
    return doc


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False
