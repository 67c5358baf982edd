import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Sequence

from pythonjsonlogger import jsonlogger

from kcpsim.config.settings import (
    LOG_BACKUP_COUNT,
    LOG_DIR,
    LOG_FORMAT,
    LOG_JSON,
    LOG_LEVEL,
    LOG_MAX_BYTES,
)
from kcpsim.app.core.exceptions import UsageError


def setup_logging(level: str = LOG_LEVEL, json_logs: bool = LOG_JSON,
                  log_file: Optional[Path] = None) -> logging.Logger:
    """Configure logging for the simulator; stdout stays free for data"""
    if json_logs:
        formatter = jsonlogger.JsonFormatter(LOG_FORMAT)
    else:
        formatter = logging.Formatter(LOG_FORMAT)

    # Console handler
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)

    root_logger = logging.getLogger()
    # drop handlers left by an earlier call
    for handler in list(root_logger.handlers):
        if getattr(handler, "_kcpsim", False):
            root_logger.removeHandler(handler)
    console_handler._kcpsim = True
    root_logger.setLevel(level.upper())
    root_logger.addHandler(console_handler)

    # File handler
    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(log_file, maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUP_COUNT)
        file_handler.setFormatter(formatter)
        file_handler._kcpsim = True
        root_logger.addHandler(file_handler)

    return root_logger


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, set up logging and run the chosen subcommand"""
    from kcpsim.app.cli.commands import run
    from kcpsim.app.cli.config import parse_config

    log_file = LOG_DIR / 'kcpsim.log' if LOG_DIR.exists() else None
    logger = setup_logging(log_file=log_file)
    try:
        config = parse_config(argv)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        return 2
    if config.log_level:
        try:
            logger.setLevel(config.log_level.upper())
        except ValueError:
            logger.error(f"Usage error: log_level: unknown level {config.log_level!r}")
            return 2
    return run(config)


if __name__ == '__main__':
    sys.exit(main())
