import logging
import sys
from typing import Optional, TextIO

import structlog

from lusolve.config import settings

# third-party loggers that chatter at INFO while plotting
_QUIET_LOGGERS = ("matplotlib", "PIL")


def setup_logging(level: Optional[str] = None, stream: TextIO = sys.stderr) -> None:
    """
    Configure structlog to emit one JSON object per event on `stream`.

    Logs go to stderr so stdout carries only command results. Context bound
    with `structlog.contextvars` (the command and problem of a run) is merged
    into every event, including those from the numerical modules.
    """
    level_name = (level or settings.log_level).upper()
    numeric = getattr(logging, level_name, logging.INFO)

    logging.basicConfig(format="%(message)s", stream=stream, level=numeric, force=True)
    for name in _QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(numeric, logging.WARNING))

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer(sort_keys=True),
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )
