"""``simbacl`` command line.

Every subcommand writes its outputs plus ``manifest.json`` into
``--out-dir``.  The manifest records the full argument vector, so
:func:`replay` re-runs a command and reproduces its outputs.  Errors map to
exit codes 2 (config), 3 (data), 4 (numerical), 5 (capacity).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io
from .divergence import kl_comparison
from .errors import ConfigError, NumericalError, SimbaError
from .filtering import simba_loglik
from .inference import (METHODS, AdamConfig, ConfidenceEllipsoid, GradientDescentConfig, fit_composite,
                        coverage_experiment, gaussian_coverage, godambe)
from .models import default_free
from .oracle import exact_component_marginal, exact_loglik
from .parameters import ThetaMap
from .partition import Partition
from .rng import derive_seed
from .simulate import ensure_outbreak


# helpers ---------------------------------------------------------------------------

def _out(args, name):
    return str(Path(args.out_dir) / name)


def _setup(args):
    cfg = io.load_config(args.config)
    return cfg, cfg.build_model()


def _observations(args, model):
    return io.read_observations(args.obs, model, None)


def _partition(spec, model):
    return Partition.parse(spec, model.n_components, model.n_states)


def _free(spec, model):
    if spec is None:
        return default_free(model)
    names = {b.name for b in model.layout}
    out = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part not in names:
            raise ConfigError(f"--free: unknown parameter block {part!r}; expected some of {sorted(names)}")
        out[part] = True
    if not out:
        raise ConfigError("--free names no parameter block")
    return out


def _optimizer(args):
    if args.optimizer == "adam":
        return AdamConfig(learning_rate=args.lr if args.lr is not None else 0.1,
                          steps=args.steps if args.steps is not None else 500,
                          average_last=args.average_last)
    return GradientDescentConfig(learning_rate=args.lr if args.lr is not None else 100.0,
                                 steps=args.steps if args.steps is not None else 200,
                                 average_last=args.average_last)


def _theta_map(args, model, cfg):
    base = dict(cfg.params)
    if getattr(args, "theta_from", None):
        doc = io.read_json(args.theta_from)
        try:
            nat = doc["theta_hat_natural"]
        except KeyError:
            raise ConfigError(f"{args.theta_from}: no field 'theta_hat_natural'") from None
        base.update({k: np.asarray(v, dtype=float) for k, v in nat.items()})
    return ThetaMap(model.layout, base, _free(args.free, model))


# subcommands -------------------------------------------------------------------------

def cmd_simulate(args):
    cfg, model = _setup(args)
    T = args.T or cfg.T
    if T is None:
        raise ConfigError("horizon T missing: give --T or set T in the config")
    traj, obs = ensure_outbreak(model, cfg.params, T, args.seed, args.min_infected)
    files = [_out(args, "trajectory.csv"), _out(args, "observations.csv")]
    io.write_trajectory(files[0], traj.states)
    io.write_observations(files[1], obs.obs)
    if cfg.model_name in io.COVARIATE_COLUMNS:
        files.append(_out(args, "covariates.csv"))
        io.write_covariates(files[-1], model.covariates, cfg.model_name)
    return files, {"data": args.seed, "attempts": obs.attempts}, {"T": T, "N": cfg.N}


def cmd_loglik(args):
    cfg, model = _setup(args)
    y = _observations(args, model)
    part = _partition(args.partition, model)
    est = simba_loglik(model, cfg.params, y, args.P, args.variant, part, args.seed)
    lm = est.log_marginal
    report = {"composite_loglik": est.composite_loglik, "mc_standard_error": est.loo_standard_error(),
              "blocks": len(part), "P": est.P, "variant": args.variant, "partition": args.partition,
              "block_min": float(lm.min()), "block_mean": float(lm.mean()), "block_max": float(lm.max()),
              "zero_blocks": est.zero_blocks}
    files = [_out(args, "loglik.json"), _out(args, "evaluation.csv")]
    io.write_json(files[0], report)
    io.write_evaluation_dump(files[1], est.per_block)
    print(json.dumps(io._jsonable(report), sort_keys=True))
    if not np.isfinite(est.composite_loglik):
        raise NumericalError(f"composite log-likelihood is -inf (blocks {est.zero_blocks})")
    return files, {"simba": args.seed}, report


def cmd_surface(args):
    cfg, model = _setup(args)
    y = _observations(args, model)
    part = _partition(args.partition, model)
    ga, gb = ex.parse_grid(args.grid_a), ex.parse_grid(args.grid_b)
    surf = ex.profile_surface(model, cfg.params, y, args.param, ga, gb, args.P, args.variant, part, args.seed)
    files = [_out(args, "surface.csv"), _out(args, "surface.json")]
    io.write_table(files[0], ("p1", "p2", "loglik"), surf.rows())
    summary = {"param": args.param, "argmax": list(surf.argmax_value),
               "argmax_loglik": float(surf.values[surf.argmax])}
    io.write_json(files[1], summary)
    print(json.dumps(summary))
    return files, {"simba": args.seed}, summary


def cmd_fit(args):
    cfg, model = _setup(args)
    y = _observations(args, model)
    part = _partition(args.partition, model)
    tm = _theta_map(args, model, cfg)
    theta0 = tm.pack()
    opt = _optimizer(args)
    res = fit_composite(model, tm, theta0, y, args.P, args.variant, part, opt, args.seed)
    out = {"names": tm.names, "theta0": theta0, "theta0_natural": tm.natural_values(theta0),
           "theta_hat": res.theta, "theta_hat_natural": res.natural, "trace": res.trace,
           "restarts": res.restarts, "seed": args.seed, "optimizer": args.optimizer,
           "config": vars(opt), "P": args.P, "variant": args.variant, "partition": args.partition}
    files = [_out(args, "fit.json")]
    io.write_json(files[0], out)
    print(json.dumps(io._jsonable({"theta_hat": res.theta, "final_loss": res.trace[-1]})))
    return files, {"fit": args.seed}, {"final_loss": res.trace[-1]}


def cmd_godambe(args):
    cfg, model = _setup(args)
    y = _observations(args, model)
    part = _partition(args.partition, model)
    tm = _theta_map(args, model, cfg)
    theta = tm.pack()
    g = godambe(model, tm, theta, part, args.P, args.B, args.method, args.seed, args.variant,
                y_observed=y, T=y.shape[0])
    e = ConfidenceEllipsoid(theta, g.G, args.level)
    out = g.to_dict()
    out.update({"names": tm.names, "theta": theta, "level": args.level,
                "marginal_intervals": e.marginal_intervals()})
    files = [_out(args, "godambe.json")]
    io.write_json(files[0], out)
    return files, {"godambe": args.seed}, {"method": args.method}


def cmd_coverage(args):
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.gaussian:
        G = np.eye(args.dim) if args.dim else np.eye(2)
        rep = gaussian_coverage(G, args.reps, args.level, args.seed)
        config = {"generator": "gaussian", "dim": G.shape[0]}
    else:
        if args.config is None:
            raise ConfigError("coverage needs --config (or --gaussian)")
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"--methods: unknown method {m!r}; expected some of {METHODS}")
        cfg, model = _setup(args)
        tm = _theta_map(args, model, cfg)
        T = args.T or cfg.T
        if T is None:
            raise ConfigError("horizon T missing: give --T or set T in the config")
        rep = coverage_experiment(model, tm, args.reps, T, args.P, args.B, methods, args.seed,
                                  args.variant, _partition(args.partition, model), args.level,
                                  _optimizer(args))
        config = {"T": T}
    header = list(rep.rows[0].keys()) if rep.rows else ["rep"]
    files = [_out(args, "coverage.csv"), _out(args, "coverage.json")]
    io.write_table(files[0], header, rep.rows)
    summary = {"level": rep.level, "joint": rep.joint, "joint_se": rep.joint_se,
               "marginal": rep.marginal, "reps": rep.reps, "failures": rep.failures, **config}
    io.write_json(files[1], summary)
    print(json.dumps(io._jsonable({"joint": rep.joint, "joint_se": rep.joint_se})))
    return files, {"coverage": args.seed}, summary


def cmd_compare_smc(args):
    cfg, model = _setup(args)
    if args.obs:
        y = _observations(args, model)
    else:
        T = args.T or cfg.T
        if T is None:
            raise ConfigError("give --obs, --T, or T in the config")
        y = ensure_outbreak(model, cfg.params, T, derive_seed(args.seed, 0))[1].obs
    counts = [int(v) for v in args.particles.split(",") if v.strip()]
    if not counts or min(counts) < 2:
        raise ConfigError("--particles: need integers >= 2")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    rows = ex.smc_comparison(model, cfg.params, y, counts, args.reps, methods,
                             _partition(args.partition, model), args.seed)
    files = [_out(args, "comparison.csv"), _out(args, "comparison_summary.csv")]
    io.write_table(files[0], ex.COMPARISON_HEADER, rows)
    io.write_table(files[1], ex.SUMMARY_HEADER, ex.summarize_comparison(rows))
    return files, {"smc": args.seed}, {"methods": list(methods), "particles": counts}


def cmd_kl(args):
    cfg, model = _setup(args)
    T = args.T or cfg.T
    if T is None:
        raise ConfigError("horizon T missing: give --T or set T in the config")
    pp = _partition(args.p_partition, model)
    qp = _partition(args.q_partition, model)
    res = kl_comparison(model, cfg.params, T, args.E, args.P, args.seed, (args.p_variant, pp),
                        (args.q_variant, qp))
    out = {"kl": res.kl, "loo_mean": res.loo_mean, "loo_sd": res.loo_sd, "per_block": res.per_block,
           "E": args.E, "P": args.P, "T": T,
           "p": {"variant": args.p_variant, "partition": args.p_partition},
           "q": {"variant": args.q_variant, "partition": args.q_partition}}
    files = [_out(args, "kl.json")]
    io.write_json(files[0], out)
    print(json.dumps(io._jsonable({"kl": res.kl, "loo_mean": res.loo_mean, "loo_sd": res.loo_sd})))
    return files, {"kl": args.seed}, {"kl": res.kl}


def cmd_oracle(args):
    cfg, model = _setup(args)
    y = _observations(args, model)
    out = {"exact_loglik": exact_loglik(model, cfg.params, y)}
    if args.block:
        block = [int(v) for v in args.block.split(",") if v.strip()]
        out["block"] = block
        out["exact_block_marginal"] = exact_component_marginal(model, cfg.params, y, block)
    files = [_out(args, "oracle.json")]
    io.write_json(files[0], out)
    print(json.dumps(io._jsonable(out)))
    return files, {}, out


# parser -------------------------------------------------------------------------------

def _common(p, obs=True):
    p.add_argument("--config", required=True, help="model + parameter JSON")
    if obs:
        p.add_argument("--obs", required=True, help="observation CSV (T rows x N columns, NA = missing)")


def _simba_opts(p, P=50):
    p.add_argument("--variant", choices=("feedback", "no_feedback"), default="no_feedback")
    p.add_argument("--partition", default="singletons", help="singletons | pairs | whole | '0,1;2;3'")
    p.add_argument("--P", type=int, default=P, help="complement simulations")


def _opt_opts(p):
    p.add_argument("--free", help="comma list of parameter blocks to estimate")
    p.add_argument("--optimizer", choices=("adam", "gd"), default="adam")
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--average-last", type=int, default=0, help="average the last k iterates")


def build_parser():
    ap = argparse.ArgumentParser(prog="simbacl", description="simulation-based composite likelihood toolkit")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1, help="worker threads for compiled kernels")
    ap.add_argument("--out-dir", default=".")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate latent states and detections")
    _common(p, obs=False)
    p.add_argument("--T", type=int)
    p.add_argument("--min-infected", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("loglik", help="composite log-likelihood of observations")
    _common(p)
    _simba_opts(p)
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("surface", help="profile surface over a two-entry parameter block")
    _common(p)
    _simba_opts(p)
    p.add_argument("--param", required=True)
    p.add_argument("--grid-a", required=True, help="lo:hi:n or comma list")
    p.add_argument("--grid-b", required=True)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("fit", help="stochastic-gradient fit of free parameters")
    _common(p)
    _simba_opts(p)
    _opt_opts(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("godambe", help="Godambe information and confidence sets")
    _common(p)
    _simba_opts(p)
    p.add_argument("--free")
    p.add_argument("--theta-from", help="fit.json whose estimate is used")
    p.add_argument("--method", choices=METHODS, default="expected_bartlett")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_godambe)

    p = sub.add_parser("coverage", help="empirical coverage of Godambe confidence sets")
    p.add_argument("--config")
    _simba_opts(p, P=20)
    _opt_opts(p)
    p.add_argument("--T", type=int)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--methods", default="expected_bartlett")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--gaussian", action="store_true", help="synthetic N(theta, G^-1) estimates")
    p.add_argument("--dim", type=int, default=2)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("compare-smc", help="APF / block APF / composite likelihood comparison table")
    p.add_argument("--config", required=True)
    p.add_argument("--obs")
    p.add_argument("--T", type=int)
    p.add_argument("--particles", default="100")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--methods", default=",".join(ex.SMC_METHODS))
    p.add_argument("--partition", default="singletons")
    p.set_defaults(func=cmd_compare_smc)

    p = sub.add_parser("kl", help="empirical KL between two composite likelihood configurations")
    p.add_argument("--config", required=True)
    p.add_argument("--T", type=int)
    p.add_argument("--E", type=int, default=20, help="evaluation datasets")
    p.add_argument("--P", type=int, default=100)
    p.add_argument("--p-variant", choices=("feedback", "no_feedback"), default="feedback")
    p.add_argument("--q-variant", choices=("feedback", "no_feedback"), default="no_feedback")
    p.add_argument("--p-partition", default="singletons")
    p.add_argument("--q-partition", default="singletons")
    p.set_defaults(func=cmd_kl)

    p = sub.add_parser("oracle", help="exact log-likelihood on toy sizes")
    _common(p)
    p.add_argument("--block", help="comma list of components for the exact block marginal")
    p.set_defaults(func=cmd_oracle)
    return ap


def run(argv):
    """Parse and execute; raises library errors instead of exiting."""
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files, seeds, extra = args.func(args)
    cfg = io.read_json(args.config) if getattr(args, "config", None) else {}
    manifest = io.RunManifest(args.command, list(argv), cfg, {"seed": args.seed, **seeds},
                              [os.path.basename(f) for f in files], time.perf_counter() - t0)
    io.write_manifest(args.out_dir, manifest)
    return files


def replay(manifest_path, out_dir=None):
    """Re-run the command recorded in a manifest (optionally into another directory)."""
    doc = io.read_manifest(manifest_path)
    argv = list(doc["argv"])
    if out_dir is not None:
        argv = _replace_out_dir(argv, str(out_dir))
    return run(argv)


def _replace_out_dir(argv, out_dir):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out-dir":
            skip = True
            continue
        if a.startswith("--out-dir="):
            continue
        out.append(a)
    return ["--out-dir", out_dir] + out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        run(argv)
    except SimbaError as exc:
        print(f"simbacl: error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"simbacl: error [config]: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
