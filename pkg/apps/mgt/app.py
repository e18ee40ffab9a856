import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import find_dotenv, load_dotenv

from apps.mgt.repository.output_repository import (
    OutputRepository,
    OutputRepositoryError,
)
from apps.mgt.service.run_service import (
    EXIT_IO,
    ConfigError,
    RunService,
    exit_code_for,
    parse_config,
    with_overrides,
)
from shared.config.config import Config

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "run": "evolve the configured initial data and write diagnostics",
    "sweep-eps": "distance of regularized runs to the eps = 0 run",
    "refine": "grid and time refinement studies",
    "twins": "difference functional of two runs from the same data",
    "picard": "Duhamel fixed-point construction on a short horizon",
    "blowup": "blow-up monitor demo with an amplitude sweep",
    "materials": "Zener material check and harmonic loss averages",
}


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zmgt",
        description="Simulator and verification harness for the "
        "Moore-Gibson-Thompson/heat system of a Zener material.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="JSON run config")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=_seed, default=None, help="random trial seed")
        p.add_argument("--quiet", action="store_true", help="log warnings only")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    CLI entry point.

    Exit codes: 0 ok, 1 I/O failure, 2 configuration or validation error,
    3 solver failure, 4 blow-up suspected, 5 no contraction.
    """
    load_dotenv(find_dotenv(usecwd=True))
    settings = Config()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else settings.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    fallback = OutputRepository(args.out or settings.output_dir)
    try:
        cfg = with_overrides(parse_config(args.config), args.command, args.seed)
    except (ConfigError, OSError) as e:
        code = exit_code_for(e) if isinstance(e, ConfigError) else EXIT_IO
        logger.error("Cannot load %s: %s", args.config, e)
        _write_failure(fallback, args.command, e, code)
        return code

    directory = args.out or cfg.output.directory or settings.output_dir
    repository = OutputRepository(directory)
    try:
        return RunService(cfg, repository, settings).run()
    except OutputRepositoryError as e:
        logger.error("%s", e)
        return EXIT_IO
    except Exception as e:
        logger.exception("Unexpected failure")
        _write_failure(repository, args.command, e, EXIT_IO)
        return EXIT_IO


def _write_failure(
    repository: OutputRepository, command: str, error: Exception, code: int
) -> None:
    try:
        repository.write_json(
            "summary.json",
            {
                "selector": command,
                "status": "failed",
                "exit_code": code,
                "error": {"type": type(error).__name__, "message": str(error)},
            },
        )
    except OutputRepositoryError as e:
        logger.error("%s", e)


if __name__ == "__main__":
    sys.exit(main())
