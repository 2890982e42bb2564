import logging
import os
import sys
from typing import Dict, Iterable, Mapping, Optional

# Log levels
TRACE = 5  # per-joint kernel detail, below DEBUG
DEBUG = logging.DEBUG
INFO = logging.INFO
WARNING = logging.WARNING
ERROR = logging.ERROR

_LEVELS = {
    "TRACE": TRACE,
    "DEBUG": DEBUG,
    "INFO": INFO,
    "WARNING": WARNING,
    "ERROR": ERROR,
    "CRITICAL": logging.CRITICAL,
}

# third-party loggers held at WARNING unless an override names them
QUIET = ("matplotlib", "PIL")

logging.addLevelName(TRACE, "TRACE")


class TraceLogger(logging.Logger):
    """Logger with TRACE level support"""

    def trace(self, msg, *args, **kwargs):
        """Log at TRACE level (more detailed than DEBUG)"""
        if self.isEnabledFor(TRACE):
            self._log(TRACE, msg, args, **kwargs)


logging.setLoggerClass(TraceLogger)


def level_from_name(name: Optional[str], default: int = INFO) -> int:
    """Map a level name such as ``"trace"`` or ``"DEBUG"`` to its numeric level."""
    if not name:
        return default
    return _LEVELS.get(name.upper(), default)


def parse_module_levels(entries: Iterable[str]) -> Dict[str, int]:
    """Per-logger levels from ``name=LEVEL`` entries, comma-separated or repeated.

    A name without a dot is a service module, so ``rbd_kernels=TRACE`` raises
    ``app.services.rbd_kernels`` alone to TRACE.
    """
    levels: Dict[str, int] = {}
    for entry in entries:
        for item in filter(None, (part.strip() for part in entry.split(","))):
            name, sep, level = item.partition("=")
            if not sep or not name.strip() or level.strip().upper() not in _LEVELS:
                raise ValueError(f"bad log override {item!r}, expected name=LEVEL")
            name = name.strip()
            if "." not in name:
                name = f"app.services.{name}"
            levels[name] = _LEVELS[level.strip().upper()]
    return levels


def configure_logging(
    level: int = INFO,
    log_file: Optional[str] = None,
    module_levels: Optional[Mapping[str, int]] = None,
):
    """
    Configure the logging system.

    Args:
        level: The logging level (use constants from this module)
        log_file: Optional path to a log file
        module_levels: Levels for individual loggers, e.g. from ``parse_module_levels``
    """
    # LOG_LEVEL from the environment wins over the argument
    level = level_from_name(os.getenv("LOG_LEVEL"), level)

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    # stderr keeps stdout free for summary tables
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)

    root_logger = logging.getLogger()
    root_logger.setLevel(min([level, *(module_levels or {}).values()]))
    console_handler.addFilter(_LevelFilter(level, module_levels or {}))

    # Remove existing handlers to avoid duplicates
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    root_logger.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        file_handler.addFilter(_LevelFilter(level, module_levels or {}))
        root_logger.addHandler(file_handler)

    for name in QUIET:
        logging.getLogger(name).setLevel(WARNING)
    for name, module_level in (module_levels or {}).items():
        logging.getLogger(name).setLevel(module_level)

    root_logger.debug(f"Logging configured with level: {logging.getLevelName(level)}")
    if module_levels:
        root_logger.debug(
            "Logger overrides: "
            + ", ".join(f"{n}={logging.getLevelName(v)}" for n, v in sorted(module_levels.items()))
        )
    if log_file:
        root_logger.debug(f"Logging to file: {log_file}")


class _LevelFilter(logging.Filter):
    """Passes a record at the level of its most specific override, else the global level."""

    def __init__(self, level: int, module_levels: Mapping[str, int]):
        super().__init__()
        self.level = level
        self.module_levels = dict(module_levels)

    def threshold(self, name: str) -> int:
        while name:
            if name in self.module_levels:
                return self.module_levels[name]
            name = name.rpartition(".")[0]
        return self.level

    def filter(self, record: logging.LogRecord) -> bool:
        return record.levelno >= self.threshold(record.name)


def get_logger(name: str) -> TraceLogger:
    """Get a logger for a specific module"""
    return logging.getLogger(name)
