"""``nir`` command line.

    nir [--config run.toml] <ingest|candidates|run|ablate|sweep|grade> [flags]

Exit codes: 0 success, 1 usage or configuration error, 2 run-level failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .candidates import write_candidates
from .dataset import DataFormatError, load_movielens
from .pipeline import (
    FILTERS,
    STRATEGIES,
    ConfigError,
    RunConfig,
    RunFailedError,
    build_candidates,
    config_from_mapping,
    parse_sizes,
    regrade,
    run,
    run_ablation,
    run_sweep,
    sample_users,
)

EXIT_USAGE = 1
EXIT_RUN_FAILED = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # defaults are None so only explicit flags override the config file
    g = p.add_argument_group("data")
    g.add_argument("--data-dir")
    g.add_argument("--min-history", type=int)
    g.add_argument("--output-dir")
    g.add_argument("--user-sample", type=int)
    g.add_argument("--sample-seed", type=int)
    g = p.add_argument_group("strategy")
    g.add_argument("--strategy", choices=STRATEGIES)
    g.add_argument("--filter", choices=FILTERS)
    g.add_argument("--m", "-m", type=int, dest="m")
    g.add_argument("--n", "-n", type=int, dest="n")
    g.add_argument("--s", "-s", type=int, dest="s")
    g.add_argument("--k", "-k", type=int, dest="k")
    g.add_argument("--history-cap", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--threshold", type=float)
    g.add_argument("--pop-exclude-seen", type=_bool)
    g.add_argument("--use-candidates", type=_bool)
    g.add_argument("--use-preference-step", type=_bool)
    g.add_argument("--use-representative-step", type=_bool)
    g.add_argument("--templates")
    g.add_argument("--candidates-in")
    g.add_argument("--candidates-out")
    g = p.add_argument_group("model")
    g.add_argument("--backend", choices=("http", "stub"))
    g.add_argument("--model")
    g.add_argument("--api-base")
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-tokens", type=int)
    g.add_argument("--cache-dir")
    g.add_argument("--concurrency", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nir", description="Zero-shot next-item recommendation experiments.")
    ap.add_argument("--config", type=Path, help="TOML file with RunConfig keys (top level or [run])")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load the dataset and report counts")
    p.add_argument("--data-dir")
    p.add_argument("--min-history", type=int)

    p = sub.add_parser("candidates", help="compute candidate sets and write JSONL")
    _add_run_flags(p)

    p = sub.add_parser("run", help="one strategy end to end")
    _add_run_flags(p)

    p = sub.add_parser("ablate", help="the five prompting-component toggles")
    _add_run_flags(p)

    p = sub.add_parser("sweep", help="one run per candidate set size")
    _add_run_flags(p)
    p.add_argument("--sizes", default="15..22", help="e.g. 15..22 or 15,17,19")

    p = sub.add_parser("grade", help="re-extract and re-score stored records")
    _add_run_flags(p)
    p.add_argument("--records", required=True, type=Path)
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config, "rb") as fh:
            config = config_from_mapping(tomllib.load(fh), config)
    names = {f.name for f in dataclasses.fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names and v is not None}
    return dataclasses.replace(config, **overrides)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        if args.command == "ingest":
            config.validate()
            ds = load_movielens(config.data_dir, config.min_history)
            _print({
                "events": len(ds.events),
                "users": len(ds.histories),
                "items": len(ds.catalog),
                "eligible_users": len(ds.split.eligible_users),
                "note": "canonical MovieLens 100K has 943 users / 1682 items; "
                        "944 / 1683 arise from counting a 0 padding index",
            })
        elif args.command == "candidates":
            if not config.candidates_out:
                raise ConfigError("--candidates-out is required")
            config.validate()
            ds = load_movielens(config.data_dir, config.min_history)
            users = sample_users(ds.split.eligible_users, config.user_sample, config.sample_seed)
            sets = build_candidates(ds, config, users)
            write_candidates(config.candidates_out, (sets[u] for u in users))
            covered = sum(ds.split.ground_truth[u] in sets[u] for u in users)
            _print({"users": len(users), "coverage": covered / len(users), "path": config.candidates_out})
        elif args.command == "run":
            _print(run(config).summary_doc)
        elif args.command == "ablate":
            _print(run_ablation(config))
        elif args.command == "sweep":
            _print(run_sweep(config, parse_sizes(args.sizes)))
        elif args.command == "grade":
            config.validate()
            ds = load_movielens(config.data_dir, config.min_history)
            _print(regrade(args.records, ds, config.k, config.threshold, config.output_dir).to_json())
    except (ConfigError, FileNotFoundError, DataFormatError, ValueError) as exc:
        print(f"nir: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailedError as exc:
        print(f"nir: run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())
