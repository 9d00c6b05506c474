"""``ksat`` command line: run, grid, synth and linkpred subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import ConfigError, DivergenceError, KsatError, StageError
from .runner import (
    emit_report,
    evaluate_links,
    parse_config,
    run_experiment,
    run_grid,
    write_synthetic,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("ksat")


def exit_code_for(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return EXIT_CONFIG
    if isinstance(cause, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(cause, OSError):
        return EXIT_IO
    return EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run one experiment"),
        ("grid", "run the experiment under all four infusion policies"),
        ("synth", "write the synthetic task as TSV files plus triples.tsv"),
        ("linkpred", "evaluate embeddings on held-out link prediction only"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--policy", help="override the config policy")
        p.add_argument("--out", help="override the config out_dir")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {"seed": args.seed, "policy": args.policy, "out_dir": args.out}
    try:
        cfg = parse_config(args.config, overrides)
        if args.command == "run":
            artifacts = run_experiment(cfg)
            for path in emit_report(artifacts, cfg.out_dir):
                print(path)
        elif args.command == "grid":
            results = run_grid(cfg)
            for policy, artifacts in results.items():
                log.info("policy=%s base_params_sha256=%s", policy, artifacts.base_params_hash)
                emit_report(artifacts, os.path.join(cfg.out_dir, policy))
                print(f"{policy}\taccuracy={artifacts.report.accuracy:.4f}\tf1={artifacts.report.f1:.4f}")
        elif args.command == "synth":
            for path in write_synthetic(cfg, cfg.out_dir):
                print(path)
        elif args.command == "linkpred":
            result = evaluate_links(cfg)
            os.makedirs(cfg.out_dir, exist_ok=True)
            with open(os.path.join(cfg.out_dir, "linkpred.json"), "w", encoding="utf-8") as fh:
                json.dump(result, fh, indent=2)
                fh.write("\n")
            print(json.dumps(result))
    except (KsatError, OSError) as exc:
        print(f"ksat: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
