"""
RIRL - Main Module
Command-line entry point for the overall and robustness experiments
"""

import logging
import sys
from typing import Optional, Sequence

from handlers.commands import run_overall, run_robustness, run_snapshot_evaluation
from handlers.config import parse_config, wants_verbose
from scripts.setup_logging import setup_run_logging
from services.exceptions import RIRLError, UsageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse flags, run the selected experiment and map failures to exit codes"""
    argv = list(sys.argv[1:] if argv is None else argv)
    verbose = wants_verbose(argv)
    # Console only until the output directory is known
    setup_run_logging(verbose=verbose)
    try:
        cfg = parse_config(argv)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE

    setup_run_logging(cfg.out_dir, verbose=verbose)
    if cfg.eval_from:
        mode, command = "snapshot evaluation", run_snapshot_evaluation
    elif cfg.cross_validation:
        mode, command = "robustness", run_robustness
    else:
        mode, command = "overall", run_overall
    logger.info(f"Starting {mode} run {cfg.run_id!r} (city={cfg.city}, "
                f"priority={cfg.priority_mode}, seed={cfg.seed}) -> {cfg.out_dir}")
    try:
        status = command(cfg)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except (RIRLError, OSError) as e:
        logger.error(f"Run failed: {e}", exc_info=verbose)
        return EXIT_FAILURE

    logger.info(f"Run {cfg.run_id!r} finished with status {status}")
    return status


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Run stopped by user")
        sys.exit(EXIT_FAILURE)
