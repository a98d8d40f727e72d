"""Command-line entry point: ``blag-lab <subcommand> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .config import KINDS, default_config, load_config
from .errors import BlagLabError, ConfigValidationError, ParseError
from .experiments import WORKERS_ENV, check_budget, load_graph, run_experiment
from .network import write_edge_list


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blag-lab", description="Seeded bandit and diffusion experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*KINDS, "gen-graph"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML experiment config; defaults apply when omitted")
        s.add_argument("--seed", type=int, help="override the first replicate seed")
        s.add_argument("--out", help="output directory (gen-graph: file or directory)")
        s.add_argument("--workers", type=int, help=f"parallel replicates (default ${WORKERS_ENV} or 1)")
        s.add_argument("--allow-large", action="store_true", help="skip the memory budget check")
    return p


def _config(args: argparse.Namespace, kind: str):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = default_config(kind if kind in KINDS else "cascade")
    if kind in KINDS and cfg.experiment != kind:
        raise ConfigValidationError([f"experiment: config says {cfg.experiment!r} but the command is {kind!r}"])
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigValidationError(["--seed: must be an unsigned 64-bit integer"])
        seeds = (args.seed, *[s for s in cfg.seeds[1:] if s != args.seed])
        cfg = dataclasses.replace(cfg, seeds=seeds)
    if args.out is not None and kind != "gen-graph":
        cfg = dataclasses.replace(cfg, out=args.out)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "gen-graph":
            cfg = _config(args, "gen-graph")
            check_budget(cfg, args.allow_large)
            target = args.out or "graph.txt"
            if os.path.isdir(target):
                target = os.path.join(target, "graph.txt")
            net = load_graph(cfg, cfg.seeds[0])
            with open(target, "wb") as fh:
                write_edge_list(net, fh)
            print(f"wrote {net.node_count} nodes, {net.edge_count} edges to {target}")
            return 0
        cfg = _config(args, args.command)
        report = run_experiment(cfg, workers=args.workers, allow_large=args.allow_large)
    except ConfigValidationError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BlagLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{report.experiment}: {len(report.replicates)} replicate(s) -> {os.path.join(cfg.out, 'report.json')}")
    for name, agg in report.aggregates.items():
        print(f"  {name}: median={agg['median']:.6g} q1={agg['q1']:.6g} q3={agg['q3']:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
