#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Main entry point for the OMC-RL experiment runner."""

import argparse
import os
import sys
import time
import traceback
from datetime import datetime
from typing import List, Optional

from humanfriendly import format_timespan

from config import (
    APP_NAME,
    CONFIG_FILE,
    LOG_FOLDER,
    PROG_NAME,
    VERSION,
    app_logger,
    apply_overrides,
    configure_logging,
    debug_logger,
    load_config,
)
from core import pipeline
from core.errors import ConfigError, OmcrlError, PrerequisiteError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def rotate_log_file(log_file: str, max_size: int = 10 * 1024 * 1024) -> None:
    """Rotate the log file if it exceeds the maximum size.

    Args:
        log_file: Path to the log file.
        max_size: Maximum file size in bytes (default: 10MB).
    """
    if not os.path.exists(log_file) or os.path.getsize(log_file) <= max_size:
        return

    timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    stem = os.path.splitext(os.path.basename(log_file))[0]
    new_file = os.path.join(os.path.dirname(log_file), f"{stem}_{timestamp}.log")
    try:
        os.rename(log_file, new_file)
        debug_logger.debug(f"Rotated log file {log_file} to {new_file} due to size exceeding {max_size} bytes")
    except Exception as e:
        app_logger.error(f"Failed to rotate log file {log_file}: {e}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG_NAME,
        description=f"{APP_NAME} {VERSION}: masked contrastive pretraining and oracle-guided navigation RL.",
    )
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {VERSION}")
    parser.add_argument("command", choices=pipeline.STAGES, help="pipeline stage to run")
    parser.add_argument("--config", default=CONFIG_FILE, help=f"YAML run configuration (default: {CONFIG_FILE})")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--mask-prob", type=float, help="override upstream.mask_prob")
    parser.add_argument("--decay", choices=("linear", "exp", "fixed"), help="distillation weight schedule")
    parser.add_argument("--no-oracle", action="store_true", help="train the student without oracle guidance")
    parser.add_argument("--no-projection", action="store_true", help="drop the projection head")
    parser.add_argument("--curl-mode", action="store_true", help="single-frame CURL pretraining instead of masking")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--policy", choices=("student", "oracle", "scripted"), help="policy evaluated by `eval`")
    parser.add_argument("--force", action="store_true",
                        help="load checkpoints written for a different model configuration")
    return parser


def run_command(args: argparse.Namespace) -> None:
    """Load the configuration, set up run logging and dispatch to the requested stage."""
    config = load_config(args.config)
    config = apply_overrides(
        config,
        seed=args.seed,
        mask_prob=args.mask_prob,
        decay=args.decay,
        no_oracle=args.no_oracle,
        no_projection=args.no_projection,
        curl_mode=args.curl_mode,
        out=args.out,
    )
    log_dir = os.path.join(config["output_dir"], LOG_FOLDER)
    rotate_log_file(os.path.join(log_dir, "app.log"))
    if config["logging"]["verbose"]:
        rotate_log_file(os.path.join(log_dir, "debug.log"))
    configure_logging(config["output_dir"], config["logging"]["level"], config["logging"]["verbose"])
    app_logger.info(f"Starting {APP_NAME} {VERSION}: {args.command} (seed {config['seed']}, "
                    f"output {config['output_dir']})")
    debug_logger.debug(f"Effective configuration: {config}")

    started = time.monotonic()
    if args.command == "collect":
        pipeline.collect(config)
    elif args.command == "pretrain":
        pipeline.pretrain(config)
    elif args.command == "teach":
        pipeline.teach(config)
    elif args.command == "distill":
        pipeline.distill(config, force=args.force)
    elif args.command == "eval":
        report = pipeline.evaluate(config, policy_name=args.policy, force=args.force)
        print(report.table(args.policy or config["eval"]["policy"]))
    elif args.command == "plot":
        figures = pipeline.plot(config)["figures"]
        for figure in figures:
            print(figure)
    app_logger.info(f"{args.command} finished in {format_timespan(time.monotonic() - started)}")


def main(argv: Optional[List[str]] = None) -> int:
    """Parse the command line and run one pipeline stage.

    Returns:
        Exit status: 0 on success, 2 for configuration and prerequisite errors, 1 otherwise.
    """
    args = build_parser().parse_args(argv)
    try:
        run_command(args)
        return EXIT_OK
    except (ConfigError, PrerequisiteError) as e:
        app_logger.error(f"{args.command} failed: {e}", exc_info=True)
        debug_logger.debug(f"Configuration error in {args.command}: {traceback.format_exc()}")
        print(f"{PROG_NAME}: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OmcrlError as e:
        app_logger.error(f"{args.command} failed: {e}", exc_info=True)
        debug_logger.debug(f"Unhandled library error in {args.command}: {traceback.format_exc()}")
        print(f"{PROG_NAME}: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        app_logger.warning(f"{args.command} interrupted")
        return EXIT_FAILURE
    except Exception as e:
        app_logger.error(f"Unhandled exception in {args.command}: {e}", exc_info=True)
        debug_logger.debug(f"Unhandled exception in {args.command}: {traceback.format_exc()}")
        traceback.print_exc()
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
