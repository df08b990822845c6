"""
Logging setup shared by the library and the CLI.

Three files under the log directory, all attached to the root logger unless
noted::

    app_YYYYMMDD.log           DEBUG and above, 50 MB x 30
    errors_YYYYMMDD.log        ERROR and above with tracebacks, 10 MB x 50
    performance_YYYYMMDD.log   'performance' logger only, rotated at midnight x 90

plus an INFO console handler on stdout. The directory defaults to ``logs``
and follows ``NRBM_LOG_DIR`` when set (the test suite points it at a temp
dir). numpy floating-point warnings are routed into the same files.
"""

import logging
import logging.handlers
import os
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional

DETAILED_FORMAT = '%(asctime)s | %(name)s | %(levelname)s | %(filename)s:%(lineno)d | %(funcName)s | %(message)s'
CONSOLE_FORMAT = '%(asctime)s | %(levelname)s | %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

APP_LOGGER = 'neuro_rbm'
PERFORMANCE_LOGGER = 'performance'
ERROR_LOGGER = 'errors'


@dataclass(frozen=True)
class LogFile:
    """One rotating log file: size rotation when ``max_mb`` is set, else daily."""

    prefix: str
    level: int
    backups: int
    max_mb: Optional[int] = None
    logger: Optional[str] = None

    def handler(self, log_dir: Path, stamp: str) -> logging.Handler:
        path = log_dir / f"{self.prefix}_{stamp}.log"
        if self.max_mb is not None:
            handler = logging.handlers.RotatingFileHandler(
                path, maxBytes=self.max_mb * 1024 * 1024, backupCount=self.backups, encoding='utf-8'
            )
        else:
            handler = logging.handlers.TimedRotatingFileHandler(
                path, when='midnight', interval=1, backupCount=self.backups, encoding='utf-8'
            )
        handler.setLevel(self.level)
        handler.setFormatter(logging.Formatter(DETAILED_FORMAT, DATE_FORMAT))
        return handler


LOG_FILES = (
    LogFile("app", logging.DEBUG, backups=30, max_mb=50),
    LogFile("errors", logging.ERROR, backups=50, max_mb=10),
    LogFile("performance", logging.DEBUG, backups=90, logger=PERFORMANCE_LOGGER),
)


class LoggingConfig:
    """
    Process-wide logging configuration (singleton).

    Attributes
    ----------
    log_dir: directory holding the log files
    console_handler: stdout handler whose level ``set_console_level`` changes
    app_logger: 'neuro_rbm', start-up banner and CLI messages
    performance_logger: timings written by ``log_performance``
    error_logger: target of ``log_exception`` calls without a module logger

    Example
    -------
        >>> from logging_config import get_logger
        >>> logger = get_logger(__name__)
        >>> logger.info("Sampler fit started")
    """

    _instance = None
    _initialized = False

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if LoggingConfig._initialized:
            return
        self.log_dir = Path(os.environ.get("NRBM_LOG_DIR", "logs"))
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self._install_handlers()
        LoggingConfig._initialized = True

    def _install_handlers(self):
        root = logging.getLogger()
        root.setLevel(logging.DEBUG)
        root.handlers.clear()

        self.console_handler = logging.StreamHandler(sys.stdout)
        self.console_handler.setLevel(logging.INFO)
        self.console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, DATE_FORMAT))
        root.addHandler(self.console_handler)

        stamp = datetime.now().strftime('%Y%m%d')
        for spec in LOG_FILES:
            target = logging.getLogger(spec.logger) if spec.logger else root
            target.addHandler(spec.handler(self.log_dir, stamp))

        self.app_logger = logging.getLogger(APP_LOGGER)
        self.performance_logger = logging.getLogger(PERFORMANCE_LOGGER)
        self.error_logger = logging.getLogger(ERROR_LOGGER)

        # RuntimeWarnings from numpy (overflow in exp, invalid divide) end up in the app log
        logging.captureWarnings(True)

        self.app_logger.debug(f"Logging to {self.log_dir.absolute()} ({', '.join(f.prefix for f in LOG_FILES)})")

    def set_console_level(self, level: str):
        """Change the console verbosity; the file logs keep their own levels."""
        self.console_handler.setLevel(getattr(logging, level.upper(), logging.INFO))

    def get_logger(self, name: str) -> logging.Logger:
        return logging.getLogger(name)

    def log_exception(self, logger: Optional[logging.Logger], exc: BaseException, context: str = ""):
        """
        Log ``exc`` with its traceback as one record.

        Args
        ----
        logger: module logger; None uses the 'errors' logger
        exc: exception to log
        context: what was being done, e.g. "Loading model.nrbm"
        """
        header = "EXCEPTION OCCURRED" + (f" - {context}" if context else "")
        (logger or self.error_logger).error(
            f"{header} | {type(exc).__name__}: {exc}",
            exc_info=(type(exc), exc, exc.__traceback__),
        )


_logging_config = LoggingConfig()


def get_logger(name: str) -> logging.Logger:
    """
    Logger for ``name`` (usually ``__name__``) under the shared configuration.

    Example
    -------
        >>> logger = get_logger(__name__)
        >>> logger.info("Compiled 12 cores")
    """
    return _logging_config.get_logger(name)


def log_exception(logger: Optional[logging.Logger], exc: BaseException, context: str = ""):
    """Log an exception with traceback and context; see ``LoggingConfig.log_exception``."""
    _logging_config.log_exception(logger, exc, context)


def set_console_level(level: Optional[str]):
    """Apply a console level from configuration; ``None`` leaves it unchanged."""
    if level:
        _logging_config.set_console_level(level)
