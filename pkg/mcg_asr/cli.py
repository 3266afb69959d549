"""
Command-line entry point.

    python -m mcg_asr synth|stats|train|eval|sweep [--config FILE] [--preset desk|full] [--key=value ...]

Any ``--section.key=value`` (or unique bare ``--key=value``) flag not known
to the subcommand overrides the corresponding config entry. Relative paths
resolve against ``MCG_ASR_OUTPUT_ROOT``.
"""

import argparse
import json
import sys
from typing import List, Optional, Sequence

from loguru import logger

from .config import EPSILON_GRID, Config, RunConfig, load_run_config
from .data.synth import synth_toy_corpus
from .errors import ConfigError, McgAsrError, NumericError
from .evaluation import evaluate, sweep
from .numerics.tensor import set_precision
from .trainer import compute_corpus_stats, train
from .utils import create_result, ensure_dir

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcg_asr", description="Gate front-end + Conformer-CTC toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", type=str, default=None, help="INI file with one section per module")
        p.add_argument("--preset", type=str, default="desk", choices=["desk", "full"])
        return p

    common(sub.add_parser("synth", help="write the synthetic toy corpus"))
    common(sub.add_parser("stats", help="compute clean corpus statistics for gate labels"))
    p = common(sub.add_parser("train", help="train the joint model"))
    p.add_argument("--resume", type=str, default=None, help="checkpoint to resume from")
    p = common(sub.add_parser("eval", help="decode the test conditions"))
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--manifest", type=str, default=None, help="test manifest (default: corpus test.lst)")
    p = common(sub.add_parser("sweep", help="train and evaluate each epsilon set"))
    p.add_argument("--grid", type=str, default=None, help='JSON list of epsilon lists, e.g. "[[0], [-1, 1]]"')
    return parser


def configure_logging(level: str) -> None:
    logger.remove()
    level = "DEBUG" if Config.DEBUG else level.upper()
    logger.add(sys.stderr, level=level, format="{time:HH:mm:ss} | {level:<7} | {message}")


def resolve_config(args: argparse.Namespace, overrides: Sequence[str]) -> RunConfig:
    cfg = load_run_config(args.config, overrides, preset=args.preset)
    return cfg.model_copy(update={"paths": cfg.paths.resolve(ensure_dir(Config.OUTPUT_ROOT))})


def _parse_grid(text: Optional[str]) -> List[List[float]]:
    if text is None:
        return [list(row) for row in EPSILON_GRID]
    try:
        grid = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"--grid is not valid JSON: {text!r}") from exc
    if not isinstance(grid, list) or not all(isinstance(row, list) for row in grid):
        raise ConfigError("--grid must be a list of epsilon lists")
    return [[float(e) for e in row] for row in grid]


def run(args: argparse.Namespace, overrides: Sequence[str]) -> dict:
    cfg = resolve_config(args, overrides)
    if args.command == "synth":
        return create_result({"manifests": synth_toy_corpus(cfg, ensure_dir(cfg.paths.corpus))})
    if args.command == "stats":
        return compute_corpus_stats(cfg)
    if args.command == "train":
        return train(cfg, resume=args.resume)
    if args.command == "eval":
        return evaluate(cfg, checkpoint=args.checkpoint, manifest=args.manifest)
    return sweep(cfg, _parse_grid(args.grid))


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging(Config.LOG_LEVEL)
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    unknown = [a for a in extra if not (a.startswith("--") and "=" in a)]
    if unknown:
        parser.error(f"unrecognized arguments: {' '.join(unknown)}")
    try:
        try:
            set_precision(Config.PRECISION)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        result = run(args, extra)
    except ConfigError as e:
        logger.error(f"[CLI] configuration error: {e}")
        return EXIT_CONFIG
    except NumericError as e:
        logger.error(f"[CLI] numeric failure: {e}")
        return EXIT_NUMERIC
    except McgAsrError as e:
        logger.error(f"[CLI] {args.command} failed: {e}")
        return EXIT_FAILURE

    if result.get("report"):
        print(result["report"], end="")
    if result.get("status") == "error":
        logger.error(f"[CLI] {args.command} failed: {result.get('error')}")
        return EXIT_NUMERIC if result.get("kind") == "numeric" else EXIT_FAILURE
    logger.info(f"[CLI] {args.command} finished with status {result.get('status')}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
