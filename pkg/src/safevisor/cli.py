"""``safevisor`` command line: abstract, synthesize, simulate, inspect, serve.

Exit codes: 0 success, 2 configuration error, 3 infeasible tolerance,
4 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import persistence
from .abstraction import build_abstraction, build_grid, discretize_inputs
from .config import ConfigError, ExperimentConfig, load_config
from .harness import ControllerSpec, monte_carlo, write_report, write_trajectories
from .supervisor import HistorySupervisor, serve
from .synthesis import InfeasibleToleranceError, value_iteration

EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 2, 3, 4

log = logging.getLogger("safevisor")


def _abstraction(cfg: ExperimentConfig):
    grid = build_grid(cfg.model, cfg.delta_x)
    inputs = discretize_inputs(cfg.model, cfg.delta_u)
    return build_abstraction(cfg.model, grid, inputs, cfg.truncation_sigmas)


def _out(args, cfg, key, default):
    return args.out or (cfg.output.get(key) if cfg else None) or default


def cmd_abstract(args) -> int:
    cfg = load_config(args.config)
    mdp = _abstraction(cfg)
    path = _out(args, cfg, "artifact", "abstraction.svmdp")
    persistence.save(path, mdp)
    print(f"wrote {path}: n_states={mdp.n_states} n_inputs={mdp.n_inputs} nnz={mdp.nnz}")
    return 0


def cmd_synthesize(args) -> int:
    cfg = load_config(args.config) if args.config else None
    if args.mdp:
        mdp, _ = persistence.load(args.mdp)
    elif cfg is not None:
        mdp = _abstraction(cfg)
    else:
        raise ConfigError("synthesize needs --config or --mdp")
    rho = args.rho if args.rho is not None else (cfg.rho if cfg else None)
    if rho is None:
        raise ConfigError("synthesize needs rho from --rho or the config")
    max_horizon = args.max_horizon or (cfg.max_horizon if cfg else 100_000)
    table = value_iteration(mdp, rho, max_horizon)
    path = _out(args, cfg, "artifact", "synthesis.svmdp")
    persistence.save(path, mdp, table)
    print(f"H={table.horizon}")
    print(f"max_value={float(table.values[-1].max())!r}")
    if table.capped:
        print(f"note: horizon capped at max_horizon={max_horizon}")
    print(f"wrote {path}")
    return 0


def _load_or_build(args, cfg):
    if args.artifact:
        mdp, table = persistence.load(args.artifact)
        if table is None:
            table = value_iteration(mdp, cfg.rho, cfg.max_horizon)
        return mdp, table
    mdp = _abstraction(cfg)
    return mdp, value_iteration(mdp, cfg.rho, cfg.max_horizon)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    n_trials = args.trials if args.trials is not None else cfg.n_trials
    seed = args.seed if args.seed is not None else cfg.seed
    workers = args.workers if args.workers is not None else cfg.workers
    mode = args.mode or cfg.mode
    if n_trials < 1:
        raise ConfigError(f"n_trials must be >= 1, got {n_trials}")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    if cfg.x0 is None:
        raise ConfigError("simulation.x0 is required")
    mdp, table = _load_or_build(args, cfg)
    controller = cfg.controller
    if mode == "advisor_only":
        controller = ControllerSpec("advisor_only", seed=controller.seed)
    csv_path = args.csv or cfg.output.get("csv")
    report, paths = monte_carlo(cfg.model, mdp, table, controller, cfg.x0, n_trials,
                                workers=workers, seed=seed, supervise=(mode == "supervised"),
                                record_trials=min(cfg.record_trials, n_trials) if csv_path else 0)
    out = _out(args, cfg, "report", None)
    if out:
        write_report(report, out, include_timing=not args.no_timing)
    if csv_path:
        write_trajectories(paths, csv_path)
    print(json.dumps(report.to_dict() if not args.no_timing else report.payload(),
                     indent=2, sort_keys=True))
    return 0


def cmd_inspect(args) -> int:
    mdp, table = persistence.load(args.artifact, mmap=True)
    g = mdp.grid
    print(f"n_states {mdp.n_states}")
    print(f"n_inputs {mdp.n_inputs}")
    print(f"safe_set [{g.safe_lo!r}, {g.safe_hi!r})  delta_x {g.delta_x!r}")
    print(f"inputs {list(mdp.inputs.representatives) if mdp.n_inputs <= 8 else '...'}  "
          f"delta_u {mdp.inputs.delta_u!r}")
    print(f"nnz {mdp.nnz}  truncation_sigmas {mdp.truncation_sigmas!r}")
    print(f"sink_prob min {float(np.min(mdp.sink))!r} max {float(np.max(mdp.sink))!r}")
    if table is None:
        print("table none")
    else:
        top = table.values[-1]
        print(f"H {table.horizon}")
        print(f"rho {table.rho!r}")
        print(f"capped {table.capped}")
        print(f"value_H min {float(top.min())!r} max {float(top.max())!r}")
    return 0


def cmd_serve(args) -> int:
    mdp, table = persistence.load(args.artifact)
    if table is None:
        raise ConfigError(f"{args.artifact} holds no value table; run synthesize first")
    serve(HistorySupervisor(mdp, table), sys.stdin, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safevisor", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("abstract", help="build and persist the finite MDP")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.set_defaults(func=cmd_abstract)

    s = sub.add_parser("synthesize", help="compute the safety advisor and certified horizon")
    s.add_argument("--config")
    s.add_argument("--mdp", help="existing abstraction file")
    s.add_argument("--rho", type=float)
    s.add_argument("--max-horizon", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synthesize)

    m = sub.add_parser("simulate", help="Monte Carlo closed-loop simulation")
    m.add_argument("--config", required=True)
    m.add_argument("--artifact", help="synthesized file; rebuilt from the config when omitted")
    m.add_argument("--out", help="report JSON path")
    m.add_argument("--trials", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--workers", type=int)
    m.add_argument("--csv")
    m.add_argument("--mode", choices=("supervised", "unverified_only", "advisor_only"))
    m.add_argument("--no-timing", action="store_true", help="omit latency fields from the report")
    m.set_defaults(func=cmd_simulate)

    i = sub.add_parser("inspect", help="summarise an artifact file")
    i.add_argument("artifact")
    i.set_defaults(func=cmd_inspect)

    v = sub.add_parser("serve", help="run the supervisor over a stdin/stdout line protocol")
    v.add_argument("artifact")
    v.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleToleranceError as exc:
        print(f"error: infeasible tolerance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, persistence.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
