"""Command line front end.

    dyvm consistency [--seed N] [--mask random|consecutive]
    dyvm flops [--preset NAME] [--token-ratios ...] [--block-ratios ...]
    dyvm forward [--preset desk] [--token-ratio F] [--block-ratio F]
    dyvm gradcheck [--seeds 0,1,2]

Reports go to --out or stdout. Logs go to stderr. Exit codes are 0 on
success, 1 if a checked property fails and 2 for bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Sequence

from .arguments import choice_arg
from .arguments import int_list_arg
from .arguments import ratio_arg
from .arguments import ratio_list_arg
from .environment import Environment
from .exceptions import ConfigError
from .exceptions import InvariantViolation
from .exceptions import WeightsArchiveError
from .lab import run_consistency
from .lab import run_forward
from .lab import run_gradcheck
from .limits import to_seed
from .model import ModelConfig
from .model import load_config
from .model import load_weights
from .model import resolve_config

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_BAD_INPUT = 2

FORMATS = ("json", "csv")
MASK_MODES = ("random", "consecutive")

# Report text and a callable that raises if a checked property failed.
CommandResult = tuple[str, Callable[[], None]]


@dataclass(frozen=True, kw_only=True)
class ExperimentSpec:
    """Everything a command needs, resolved from the command line."""

    command: str
    cfg: ModelConfig
    seed: int
    out: Path | None
    format: str
    token_ratios: tuple[float, ...] | None = None
    block_ratios: tuple[float, ...] | None = None
    mask_mode: str = "random"
    trials: int = 64
    seeds: tuple[int, ...] = (0, 1, 2)
    batch: int = 2
    weights: Path | None = None
    ratio_overrides: dict[str, float] = field(default_factory=dict)


def _json_report(command: str, body: dict[str, Any]) -> str:
    report = {"schema_version": REPORT_SCHEMA_VERSION, "command": command, **body}
    return json.dumps(report, indent=2) + "\n"


def _csv(rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_consistency(env: Environment, spec: ExperimentSpec) -> CommandResult:
    """Compare pruning strategies on random SSMs and masks."""
    report = run_consistency(
        env,
        spec.seed,
        trials=spec.trials,
        mask_mode="consecutive" if spec.mask_mode == "consecutive" else "random",
    )
    if spec.format == "csv":
        header = [
            "trial",
            "consecutive",
            "dyvm_dev",
            "plain_dev",
            "ha_dev",
            "ha_ops",
            "dyvm_ops",
        ]
        rows = [
            [
                str(t.trial),
                str(t.consecutive).lower(),
                f"{t.dyvm_dev:.6e}",
                f"{t.plain_dev:.6e}",
                f"{t.ha_dev:.6e}",
                str(t.ha_ops),
                str(t.dyvm_ops),
            ]
            for t in report.trials
        ]
        return _csv([header, *rows]), report.raise_for_failures
    return _json_report("consistency", report.to_json()), report.raise_for_failures


def cmd_flops(env: Environment, spec: ExperimentSpec) -> CommandResult:
    """Sweep FLOPs over token and block ratios."""
    grid = env.sweep_ratios(
        spec.cfg,
        spec.token_ratios or (spec.cfg.token_ratio,),
        spec.block_ratios or (spec.cfg.block_ratio,),
    )
    if spec.format == "csv":
        return grid.to_csv(), lambda: None
    return _json_report("flops", grid.to_json()), lambda: None


def cmd_forward(env: Environment, spec: ExperimentSpec) -> CommandResult:
    """Run a desk-scale model in both modes and report what it decided."""
    if spec.format != "json":
        raise ConfigError("forward reports are JSON only")

    cfg = spec.cfg
    weights = None
    if spec.weights is not None:
        archived_cfg, weights = load_weights(spec.weights)
        cfg = archived_cfg.replace(**spec.ratio_overrides)

    report = run_forward(env, cfg, spec.seed, batch=spec.batch, weights=weights)
    return _json_report("forward", report.to_json()), report.raise_for_failures


def cmd_gradcheck(env: Environment, spec: ExperimentSpec) -> CommandResult:
    """Check every analytic gradient against finite differences."""
    report = run_gradcheck(env, list(spec.seeds))
    if spec.format == "csv":
        return _csv(report.to_csv_rows()), report.raise_for_failures
    return _json_report("gradcheck", report.to_json()), report.raise_for_failures


COMMANDS: dict[str, Callable[[Environment, ExperimentSpec], CommandResult]] = {
    "consistency": cmd_consistency,
    "flops": cmd_flops,
    "forward": cmd_forward,
    "gradcheck": cmd_gradcheck,
}

DEFAULT_PRESETS = {
    "consistency": "desk",
    "flops": "vim-s",
    "forward": "desk",
    "gradcheck": "desk",
}

DEFAULT_FORMATS = {
    "consistency": "json",
    "flops": "csv",
    "forward": "json",
    "gradcheck": "json",
}


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser for every command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON model configuration")
    common.add_argument("--preset", help="model preset: vim-t, vim-s, vim-b or desk")
    common.add_argument("--seed", default="0", help="unsigned 64-bit seed")
    common.add_argument("--token-ratio", help="token keep ratio per stage")
    common.add_argument("--block-ratio", help="fraction of active blocks")
    common.add_argument("--out", type=Path, help="report path, stdout if omitted")
    common.add_argument("--format", help="json or csv")
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )

    parser = argparse.ArgumentParser(
        prog="dyvm",
        description="Token pruning and block selection for Vision Mamba.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    consistency = commands.add_parser(
        "consistency", parents=[common], help=cmd_consistency.__doc__
    )
    consistency.add_argument("--mask", default="random", help="random or consecutive")
    consistency.add_argument("--trials", type=int, default=64)

    flops = commands.add_parser("flops", parents=[common], help=cmd_flops.__doc__)
    flops.add_argument("--token-ratios", help="comma separated token ratios")
    flops.add_argument("--block-ratios", help="comma separated block ratios")

    forward = commands.add_parser("forward", parents=[common], help=cmd_forward.__doc__)
    forward.add_argument("--batch", type=int, default=2)
    forward.add_argument("--weights", type=Path, help="weight archive manifest")

    gradcheck = commands.add_parser(
        "gradcheck", parents=[common], help=cmd_gradcheck.__doc__
    )
    gradcheck.add_argument("--seeds", default="0,1,2", help="comma separated seeds")

    return parser


def resolve_spec(env: Environment, args: argparse.Namespace) -> ExperimentSpec:
    """Validate parsed arguments and resolve the model configuration.

    Raises:
        ConfigError: For any invalid argument.
    """
    command = args.command
    preset = env.preset(args.preset or DEFAULT_PRESETS[command])
    overrides = {
        "token_ratio": None
        if args.token_ratio is None
        else ratio_arg(args.token_ratio, name="--token-ratio"),
        "block_ratio": None
        if args.block_ratio is None
        else ratio_arg(args.block_ratio, name="--block-ratio", allow_zero=True),
    }
    cfg = resolve_config(
        preset,
        file_fields=load_config(args.config) if args.config else None,
        overrides=overrides,
    )

    fmt = choice_arg(
        args.format or DEFAULT_FORMATS[command], name="--format", choices=FORMATS
    )
    token_ratios = getattr(args, "token_ratios", None)
    block_ratios = getattr(args, "block_ratios", None)

    return ExperimentSpec(
        command=command,
        cfg=cfg,
        seed=to_seed(args.seed),
        out=args.out,
        format=fmt,
        token_ratios=None
        if token_ratios is None
        else ratio_list_arg(token_ratios, name="--token-ratios"),
        block_ratios=None
        if block_ratios is None
        else ratio_list_arg(block_ratios, name="--block-ratios", allow_zero=True),
        mask_mode=choice_arg(
            getattr(args, "mask", "random"), name="--mask", choices=MASK_MODES
        ),
        trials=max(int(getattr(args, "trials", 64)), 1),
        seeds=tuple(
            to_seed(s)
            for s in int_list_arg(getattr(args, "seeds", "0,1,2"), name="--seeds")
        ),
        batch=max(int(getattr(args, "batch", 2)), 1),
        weights=getattr(args, "weights", None),
        ratio_overrides={k: v for k, v in overrides.items() if v is not None},
    )


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command named in _argv_ and return its exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    env = Environment()

    try:
        spec = resolve_spec(env, args)
        text, check = COMMANDS[spec.command](env, spec)
        if spec.out is None:
            sys.stdout.write(text)
        else:
            spec.out.write_text(text, encoding="utf-8")
            logger.info("wrote %s", spec.out)
        check()
    except InvariantViolation as err:
        logger.error("%s", err)
        return EXIT_INVARIANT
    except (ConfigError, WeightsArchiveError, OSError) as err:
        logger.error("%s", err)
        return EXIT_BAD_INPUT

    return EXIT_OK
