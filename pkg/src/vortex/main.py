import argparse
import logging
import os
import sys
from datetime import datetime
from typing import List, Optional

from .handlers.commands import CommandHandlers
from .utils.failures import EXIT_CONFIG
from .utils.job_manager import JobManager

logging.basicConfig(
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s", level=logging.INFO
)
logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class VortexApp:
    def __init__(self):
        self.log_level = os.getenv("VORTEX_LOG_LEVEL", "INFO").strip().upper()
        if self.log_level not in LOG_LEVELS:
            logger.error(
                f"Invalid VORTEX_LOG_LEVEL {self.log_level!r}. Should be one of "
                f"{', '.join(LOG_LEVELS)}"
            )
            sys.exit(EXIT_CONFIG)
        logging.getLogger().setLevel(self.log_level)

        workers = os.getenv("VORTEX_WORKERS", "")
        try:
            max_workers = int(workers) if workers.strip() else None
        except ValueError:
            logger.error("Invalid VORTEX_WORKERS format. Should be an integer")
            sys.exit(EXIT_CONFIG)

        # Runs the two members of a comparison study side by side
        self.job_manager = JobManager(max_workers=max_workers)

        self.start_time = datetime.now()

        self.parser = argparse.ArgumentParser(
            prog="vortex",
            description="Continuity-path solver for vortex-ansatz metrics on the torus",
        )
        self.setup_handlers()

    def setup_handlers(self):
        """Setup all subcommands"""
        parent = argparse.ArgumentParser(add_help=False)
        parent.add_argument("--config", help="key = value configuration file")
        parent.add_argument("--out", help="output directory (overrides output_dir)")
        parent.add_argument("--seed", type=int, help="overrides seed")
        parent.add_argument(
            "--quiet", action="store_true", help="only log warnings and errors"
        )

        subparsers = self.parser.add_subparsers(dest="command", required=True)
        command_handlers = CommandHandlers(self)
        command_handlers.register_handlers(subparsers, [parent])
        self.command_handlers = command_handlers

    def run(self, argv: Optional[List[str]] = None) -> int:
        """Parse arguments and dispatch to the selected command."""
        try:
            args = self.parser.parse_args(argv)
        except SystemExit as e:
            # argparse exits with 2 on usage errors; usage is a configuration problem
            return EXIT_CONFIG if e.code else 0
        if args.quiet:
            logging.getLogger().setLevel(logging.WARNING)

        logger.info(f"Running {args.command}")
        code = args.handler(args)
        elapsed = (datetime.now() - self.start_time).total_seconds()
        logger.info(f"{args.command} finished with exit code {code} in {elapsed:.1f}s")
        return code


def main():
    app = VortexApp()
    sys.exit(app.run())


if __name__ == "__main__":
    main()
