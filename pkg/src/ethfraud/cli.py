"""Command-line entry point: ``ethfraud <command> [--config run.json] [overrides]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import pipeline
from .config import ConfigError, RunConfig, load_config
from .corpus import CorpusError
from .tasg import GraphError
from .tlm import NumericalError, VocabularyMismatch

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("ingest", "synth", "pretrain", "build-graphs", "train", "eval", "sweep")


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered not in ("true", "false"):
        raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")
    return lowered == "true"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (defaults if omitted)")
    common.add_argument("--workdir", help="override paths.workdir")
    common.add_argument("--seed", type=int)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--theta", type=float)
    common.add_argument("--tasg-mode", choices=["npmi", "tfidf", "npmi-tfidf", "off"])
    common.add_argument("--weighted-aig", type=_bool, metavar="{true|false}")
    common.add_argument("--lambda-convention", choices=["eq15", "prose"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ethfraud", description="Phishing-account detection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "sweep":
            p.add_argument("--grid", choices=["lambda", "theta", "both"], default="both")
        if name == "synth":
            p.add_argument("--accounts", type=int)
            p.add_argument("--phisher-fraction", type=float)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.workdir is not None:
        cfg.paths.workdir = args.workdir
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {args.seed}")
        cfg.seed = args.seed
    try:
        joint = {}
        if args.lam is not None:
            joint["lam"] = args.lam
        if args.weighted_aig is not None:
            joint["weighted_aig"] = args.weighted_aig
        if args.lambda_convention is not None:
            joint["lambda_convention"] = args.lambda_convention
        if joint:
            cfg.joint = replace(cfg.joint, **joint)
        tasg = {}
        if args.theta is not None:
            tasg["theta"] = args.theta
        if args.tasg_mode is not None:
            tasg["mode"] = args.tasg_mode
        if tasg:
            cfg.tasg = replace(cfg.tasg, **tasg)
        synth = {}
        if getattr(args, "accounts", None) is not None:
            synth["accounts"] = args.accounts
        if getattr(args, "phisher_fraction", None) is not None:
            synth["phisher_fraction"] = args.phisher_fraction
        if synth:
            cfg.synth = replace(cfg.synth, **synth)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def run(args: argparse.Namespace) -> object:
    cfg = resolve_config(args)
    command = args.command
    if command == "synth":
        if not 0.0 < cfg.synth.phisher_fraction < 1.0:
            raise ConfigError(f"phisher fraction must lie in (0, 1), got {cfg.synth.phisher_fraction}")
        tx, lb = pipeline.run_synth(cfg)
        return {"transactions": str(tx), "labels": str(lb)}
    if command == "ingest":
        return {"accounts": len(pipeline.run_ingest(cfg))}
    if command == "pretrain":
        return pipeline.run_pretrain(cfg)
    if command == "build-graphs":
        tasg, aig = pipeline.run_build_graphs(cfg)
        return {"tasg_edges": 0 if tasg is None else len(tasg.kind), "aig_nodes": aig.num_nodes,
                "aig_edges": int(len(aig.count))}
    if command == "train":
        return pipeline.run_train(cfg)
    if command == "eval":
        return pipeline.run_eval(cfg)
    if command == "sweep":
        return {k: str(v) for k, v in pipeline.run_sweep(cfg, args.grid).items()}
    raise ConfigError(f"unknown command {command}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except (ConfigError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, VocabularyMismatch) as exc:
        print(f"error: bad input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        name = exc.filename if getattr(exc, "filename", None) else exc
        print(f"error: missing artifact: {name}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
