"""Command-line entry point: ``mppfl {graph,solve,sweep,compare,flsim}``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from .config import SWEEP_AXES, ScenarioConfig, load_config, validate
from .errors import ConfigError, DivergenceError, DomainError, MPPFLError, ParameterError, SolverError, StructuralError
from .experiments import STREAM_GRAPH, compare_strategies, run_scenario, sweep, write_comparison, write_sweep
from .graph import format_graph, generate_er_graph, make_rng, read_graph

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("mppfl")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value scenario file (defaults if omitted)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--workers", type=int, help="override run.workers")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mppfl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("graph", parents=[common], help="generate and serialize a social graph")
    g.add_argument("--input", type=Path, help="re-serialize an existing graph file instead of sampling")
    s = sub.add_parser("solve", parents=[common], help="solve one equilibrium and its PoA analysis")
    s.add_argument("--graph", type=Path, help="use this graph file instead of sampling one")
    w = sub.add_parser("sweep", parents=[common], help="sweep one axis over values and seeds")
    w.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    w.add_argument("--values", type=float, nargs="+", help="axis values (config or built-in defaults otherwise)")
    w.add_argument("--seeds", type=int, nargs="+", help="seed set (config default otherwise)")
    c = sub.add_parser("compare", parents=[common], help="compare budget strategies")
    c.add_argument("--strategies", nargs="+", help="subset of MPP SA FIXED RANDOM")
    c.add_argument("--graph", type=Path)
    f = sub.add_parser("flsim", parents=[common], help="solve, then train the synthetic task with the equilibrium budgets")
    f.add_argument("--graph", type=Path)
    return p


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_value("run", "seed", args.seed)
    if args.workers is not None:
        cfg = cfg.with_value("run", "workers", args.workers)
    if args.command == "flsim":
        cfg = cfg.with_value("flsim", "enabled", True)
    validate(cfg)
    return cfg


def _emit(text: str, out: Path | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def _run(args) -> int:
    cfg = _config(args)
    graph = read_graph(args.graph) if getattr(args, "graph", None) else None
    if args.command == "graph":
        if args.input is not None:
            g = read_graph(args.input)
        else:
            gc = cfg.graph
            g = generate_er_graph(gc.n, make_rng(cfg.run.seed, STREAM_GRAPH), (gc.p_low, gc.p_high), (gc.w_low, gc.w_high))
        _emit(format_graph(g), args.out, "graph.txt")
    elif args.command in ("solve", "flsim"):
        res = run_scenario(cfg, args.out, graph)
        for k, v in res.summary().items():
            print(f"{k} = {v!r}")
        if res.trace is not None:
            print(f"final_excess_loss = {res.trace.final_excess!r}")
    elif args.command == "compare":
        res = run_scenario(cfg, None, graph)
        outcomes = compare_strategies(cfg, args.strategies, res)
        if args.out is not None:
            write_comparison(cfg, outcomes, args.out)
        for o in outcomes:
            print(f"{o.strategy:7s} server_cost = {o.server_cost!r} welfare = {o.welfare!r}")
    elif args.command == "sweep":
        res = sweep(cfg, args.axis, args.values, args.seeds, args.workers)
        if args.out is not None:
            write_sweep(cfg, res, args.out)
        for v, mean, std, count in res.summary["welfare"]:
            cost = next(m for x, m, _, _ in res.summary["server_cost"] if x == v)
            print(f"{args.axis} = {v!r}: welfare {mean!r} (sd {std!r}, n={count}), server cost {cost!r}")
        failed = [r for r in res.rows if r["error"]]
        for r in failed:
            print(f"point {args.axis}={r['value']!r} seed={r['seed']}: {r['error']}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
        try:
            return _run(args)
        except (ConfigError, ParameterError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (SolverError, DomainError, DivergenceError, StructuralError) as exc:
            where = getattr(exc, "stage", None)
            print(f"solver error{f' [{where}]' if where else ''}: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        except OSError as exc:
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
        except MPPFLError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
