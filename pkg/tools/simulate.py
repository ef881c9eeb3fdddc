#!/usr/bin/env python3
"""
Run π-SQUID simulation jobs from JSON configs.

Usage:
    python tools/simulate.py spectrum-sweep --config sweep.json --out results
    python tools/simulate.py recipes list
    python tools/simulate.py recipes run fig2d --out results
    python tools/simulate.py schema envelope

Exit codes:
    0  success
    2  config or schema error
    3  numerical convergence failure
    4  degenerate physics input
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from pydantic import ValidationError

from app.models import JOB_KINDS, ResultEnvelope, RunConfig
from app.services.errors import ConfigError, ConvergenceError, DegenerateInputError
from app.services.jobs import execute, load_run_config
from app.services.recipes import figure_recipes, load_recipe
from app.settings import settings

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_DEGENERATE = 4

SCHEMAS = {"config": RunConfig, "envelope": ResultEnvelope}


def add_run_options(parser: argparse.ArgumentParser, needs_config: bool = True) -> None:
    """Flags shared by every job subcommand."""
    if needs_config:
        parser.add_argument("--config", type=Path, required=True, help="JSON run config")
    parser.add_argument("--out", type=Path, default=None, help="Output directory (default: config or settings)")
    parser.add_argument("--format", choices=["csv", "json"], default=None, help="Output format")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads, 0 = auto")
    parser.add_argument("--seed", type=int, default=None, help="Seed for random initial states")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Simulate π-SQUID spectra, pulses and Berry phases."
    )
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="Logging level")
    subcommands = parser.add_subparsers(dest="command", required=True)

    for kind in JOB_KINDS:
        add_run_options(subcommands.add_parser(kind, help=f"Run a {kind} job"))

    recipes = subcommands.add_parser("recipes", help="Bundled figure recipes")
    actions = recipes.add_subparsers(dest="action", required=True)
    actions.add_parser("list", help="List recipe names")
    show = actions.add_parser("show", help="Print a recipe's config")
    show.add_argument("name")
    run = actions.add_parser("run", help="Run a recipe")
    run.add_argument("name")
    add_run_options(run, needs_config=False)

    schema = subcommands.add_parser("schema", help="Print a JSON schema")
    schema.add_argument("document", choices=sorted(SCHEMAS), help="Run config or result envelope")
    return parser


def with_seed(config: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return config
    return config.model_copy(update={"seed": seed})


def run_config(config: RunConfig, args: argparse.Namespace) -> int:
    config = with_seed(config, args.seed)
    print(f"[simulate] running {config.job.kind}")
    paths = execute(config, directory=args.out, fmt=args.format, threads=args.threads)
    for path in paths:
        print(f"[simulate] wrote {path}")
    return EXIT_OK


def run_recipes(args: argparse.Namespace) -> int:
    if args.action == "list":
        for recipe in figure_recipes():
            print(f"{recipe.name:8s} {recipe.description}")
        return EXIT_OK
    recipe = load_recipe(args.name)
    if args.action == "show":
        print(json.dumps(recipe.config.model_dump(mode="json"), indent=2, sort_keys=True))
        return EXIT_OK
    return run_config(recipe.config, args)


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "schema":
        print(json.dumps(SCHEMAS[args.document].model_json_schema(), indent=2))
        return EXIT_OK

    try:
        if args.command == "recipes":
            return run_recipes(args)
        return run_config(load_run_config(args.config, kind=args.command), args)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as e:
        print(f"Error: invalid parameters: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as e:
        print(f"Error: numerical convergence failed: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except DegenerateInputError as e:
        print(f"Error: degenerate input: {e}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
