import logging
import os
import sys

import structlog

from cfsum.constants import LOG_LEVEL_ENV

LOG_LEVELS = {
    "quiet": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def resolve_log_level(value: str | None = None) -> int:
    """Map a CFSUM_LOG value (quiet|info|debug) to a logging level, defaulting to info."""
    if value is None:
        value = os.getenv(LOG_LEVEL_ENV, "info")
    return LOG_LEVELS.get(value.strip().lower(), logging.INFO)


def configure_logging(level: str | None = None) -> None:
    """Compact JSON lines on stderr, one object per event, timestamps in UTC ISO8601."""
    raw = level if level is not None else os.getenv(LOG_LEVEL_ENV, "info")
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(sort_keys=True),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(resolve_log_level(raw)),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
    if raw.strip().lower() not in LOG_LEVELS:
        structlog.get_logger(__name__).warning(
            "Unknown log level, falling back to info", env=LOG_LEVEL_ENV, value=raw
        )


def bind_run(run_id: str, **values) -> None:
    """Attach the run correlation id to every subsequent log entry."""
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(run_id=run_id, **values)
