"""Command-line runner: ``detfree {simulate,run,compare,ess}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import _backend
from . import config as cfgmod
from . import diagnostics, models
from .errors import ConfigError, NumericalError, SizeGuardError
from .krylov import SolverConfig
from .mcmc import ChainConfig, Trace, config_digest, run_cholesky_chain, run_detfree_chain
from .sparse_linalg import MatrixMarketError, read_matrix_market, write_matrix_market

logger = logging.getLogger("detfree")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

Q_FILE, Y_FILE, OBS_FILE, A_FILE = "Q.mtx", "y.csv", "obs.csv", "A.mtx"


def _data_dir(config):
    return Path(config["model"].get("data_dir") or config["output"]["directory"])


def _truth(config):
    family = config["model"]["family"]
    truth = config["model"].get("truth")
    if truth is None:
        raise ConfigError("model/truth is required for simulation")
    return np.array([truth[k] for k in cfgmod.PARAM_NAMES[family]])


def _require(config, *keys):
    missing = [k for k in keys if k not in config["model"]]
    if missing:
        raise ConfigError(f"model: missing {', '.join(missing)} for family {config['model']['family']}")


def _digest(paths):
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


# --- subcommands -------------------------------------------------------------------

def cmd_simulate(config) -> list:
    """Simulate a synthetic data set at the configured true parameters; returns written paths."""
    family = config["model"]["family"]
    theta = _truth(config)
    out = Path(config["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    structure_seed, data_seed = np.random.SeedSequence(config["model"]["seed"]).spawn(2)
    srng = np.random.default_rng(structure_seed)
    written = []
    if family == "random_precision":
        _require(config, "n")
        factors = models.random_precision_factors(config["model"]["n"], srng)
        model = models.RandomPrecisionModel(factors.Q, np.zeros(factors.Q.n_rows), factors)
        y = models.simulate_data(model, theta, data_seed)
        write_matrix_market(factors.Q, out / Q_FILE)
        models.write_vector_csv(out / Y_FILE, y)
        written = [out / Q_FILE, out / Y_FILE]
    elif family == "wendland_gp":
        _require(config, "n")
        pts = srng.uniform(0.0, 1.0, size=(config["model"]["n"], 2))
        model = models.WendlandGPModel(pts, np.zeros(len(pts)))
        y = models.simulate_data(model, theta, data_seed)
        models.write_points_csv(out / OBS_FILE, pts, y)
        written = [out / OBS_FILE]
    else:
        _require(config, "nx", "ny", "n_obs")
        pts = srng.uniform(0.0, 1.0, size=(config["model"]["n_obs"], 2))
        m = config["model"]
        model = models.GMRFWhiteningModel(m["nx"], m["ny"], pts, np.zeros(len(pts)))
        y = models.simulate_data(model, theta, data_seed)
        models.write_points_csv(out / OBS_FILE, pts, y)
        write_matrix_market(model.A, out / A_FILE)
        written = [out / OBS_FILE, out / A_FILE]
    print(f"data digest sha256:{_digest(written)}")
    for p in written:
        print(f"wrote {p}")
    return written


def load_model(config) -> models.GaussianModel:
    family = config["model"]["family"]
    d = _data_dir(config)
    if family == "random_precision":
        Q = read_matrix_market(d / Q_FILE)
        return models.RandomPrecisionModel(Q, models.read_vector_csv(d / Y_FILE))
    pts, y = models.read_points_csv(d / OBS_FILE)
    if family == "wendland_gp":
        mf = None
        if "mean_centers" in config["model"]:
            mf = models.fit_mean_function(pts, y, config["model"]["mean_centers"], config["model"]["seed"])
        return models.WendlandGPModel(pts, y, mf)
    _require(config, "nx", "ny")
    return models.GMRFWhiteningModel(config["model"]["nx"], config["model"]["ny"], pts, y)


def chain_config(config) -> ChainConfig:
    mc = config["mcmc"]
    init = mc["init"]
    if init == "prior":
        init_theta = None
    elif init == "truth":
        init_theta = _truth(config)
    else:
        init_theta = np.array(init, dtype=float)
    n_quad = config["rational"]["N"]
    return ChainConfig(
        iterations=mc["iterations"],
        burnin=mc.get("burnin"),
        init=init_theta,
        proposal_sd=mc["proposal_sd"],
        adapt_every=mc["adapt_every"],
        adapt=mc["adapt"],
        solver=SolverConfig(config["solver"]["tol"], config["solver"]["max_iters"]),
        quad_order=None if n_quad == "auto" else int(n_quad),
        seed=mc["seed"],
    )


def cmd_run(config, sampler="detfree", threads=1) -> Trace:
    """Run one chain, write trace CSV, metadata JSON and (when possible) summary CSV."""
    model = load_model(config)
    cc = chain_config(config)
    out = Path(config["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    runner = run_detfree_chain if sampler == "detfree" else run_cholesky_chain
    trace = runner(model, cc, np.random.default_rng(cc.seed))
    trace.metadata.update(config=config, config_digest=config_digest(config), threads=threads,
                          backend=_backend.BACKEND)
    csv_path = out / f"trace_{sampler}.csv"
    trace.save(csv_path)
    print(f"wrote {csv_path}")
    if len(trace) > trace.burnin + diagnostics.MIN_LENGTH:
        try:
            summary = diagnostics.summarize(trace)
        except ValueError as exc:
            logger.warning("no summary: %s", exc)
        else:
            summary.write_csv(out / f"summary_{sampler}.csv")
            print(summary.table())
    return trace


def cmd_compare(path_a, path_b, burnin=None, out=None):
    ta, tb = Trace.read(path_a), Trace.read(path_b)
    if ta.param_names != tb.param_names:
        raise ConfigError(f"traces have different parameters: {ta.param_names} vs {tb.param_names}")
    rows = diagnostics.compare(diagnostics.summarize(ta, burnin), diagnostics.summarize(tb, burnin))
    print(diagnostics.format_compare(rows))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        diagnostics.write_compare_csv(out / "compare.csv", rows)
        print(f"wrote {out / 'compare.csv'}")
    return rows


def cmd_ess(path, burnin=None, out=None):
    summary = diagnostics.summarize(Trace.read(path), burnin)
    print(summary.table())
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        summary.write_csv(out / "summary.csv")
    return summary


# --- entry point --------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads for sparse kernels")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", required=True, metavar="PATH")
    cfg.add_argument("--seed", type=int, help="overrides the seed in the config")

    p = argparse.ArgumentParser(prog="detfree", description="Determinant-free MCMC for linear Gaussian models")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common, cfg], help="simulate a synthetic data set")
    r = sub.add_parser("run", parents=[common, cfg], help="run one MCMC chain")
    r.add_argument("--sampler", choices=("detfree", "cholesky"), default="detfree")
    c = sub.add_parser("compare", parents=[common], help="compare two traces")
    c.add_argument("trace_a")
    c.add_argument("trace_b")
    c.add_argument("--burnin", type=int)
    e = sub.add_parser("ess", parents=[common], help="summarize a trace")
    e.add_argument("trace")
    e.add_argument("--burnin", type=int)
    return p


def _configure(args):
    config = cfgmod.load(args.config)
    if args.out:
        config["output"]["directory"] = args.out
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        block = "model" if args.command == "simulate" else "mcmc"
        config[block]["seed"] = args.seed
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        _backend.set_num_threads(args.threads)
        if args.command == "simulate":
            cmd_simulate(_configure(args))
        elif args.command == "run":
            trace = cmd_run(_configure(args), args.sampler, args.threads)
            if not trace.complete:
                print(f"error: chain incomplete: {trace.metadata.get('error')}", file=sys.stderr)
                return EXIT_NUMERICAL
        elif args.command == "compare":
            cmd_compare(args.trace_a, args.trace_b, args.burnin, args.out)
        else:
            cmd_ess(args.trace, args.burnin, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SizeGuardError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, MatrixMarketError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed data files or statistics on degenerate traces
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
