"""Logging utilities"""
import logging
import sys

from ..config.settings import LOG_LEVEL, should_log

LIBRARY_FORMAT = "%(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = None):
    """Route the qsphere.* library loggers to stderr at the configured level"""
    level = (level or LOG_LEVEL).upper()
    root = logging.getLogger("qsphere")
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LIBRARY_FORMAT))
        root.addHandler(handler)
    root.setLevel(getattr(logging, level, logging.INFO))


def _emit(level: str, msg: str, stream=None):
    # stdout carries results (dry-run JSON, preset catalog); diagnostics go to stderr
    if should_log(level):
        print(f"[qsphere] {level}: {msg}", file=stream or sys.stdout)


def log_debug(msg: str):
    """Resolved settings and other detail, shown at DEBUG"""
    _emit('DEBUG', msg, sys.stderr)


def log_info(msg: str):
    """Run progress lines"""
    _emit('INFO', msg)


def log_warning(msg: str):
    _emit('WARNING', msg, sys.stderr)


def log_error(msg: str):
    """Failures; always shown unless LOG_LEVEL is above ERROR"""
    _emit('ERROR', msg, sys.stderr)
