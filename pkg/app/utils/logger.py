"""
Logging for the mean-curvature-flow laboratory

Services log under ``app.*`` and the runners under ``src.*``; both namespaces
share one console handler. A run may add a log file inside its output directory.
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Sequence, Union

from ..core.config import settings

NAMESPACES = ("app", "src")
RUN_FORMAT = "%(asctime)s - %(processName)s - %(name)s - %(levelname)s - %(message)s"


def _level() -> int:
    if settings.DEBUG:
        return logging.DEBUG
    return getattr(logging, (settings.LOG_LEVEL or "INFO").upper(), logging.INFO)


def setup_logger(name: str = "app", namespaces: Sequence[str] = NAMESPACES) -> logging.Logger:
    """Console logging for every namespace; returns the logger called ``name``."""
    level = _level()
    formatter = logging.Formatter(RUN_FORMAT)
    for namespace in set(namespaces) | {name}:
        logger = logging.getLogger(namespace)
        logger.setLevel(level)
        if any(getattr(h, "_mcflab_console", False) for h in logger.handlers):
            continue
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(formatter)
        handler._mcflab_console = True
        logger.addHandler(handler)
    return logging.getLogger(name)


def attach_run_log(out_dir: Union[str, Path], filename: Optional[str] = None,
                   namespaces: Sequence[str] = NAMESPACES) -> Path:
    """Mirror the namespaces into ``out_dir/<filename>`` (default $MCF_LOG_FILE or run.log)."""
    path = Path(out_dir) / (filename or settings.LOG_FILE or "run.log")
    path.parent.mkdir(parents=True, exist_ok=True)
    loggers = [logging.getLogger(namespace) for namespace in namespaces]
    pending = [logger for logger in loggers
               if not any(isinstance(h, logging.FileHandler) and Path(h.baseFilename) == path.absolute()
                          for h in logger.handlers)]
    if pending:
        handler = logging.FileHandler(path, encoding="utf-8")
        handler.setFormatter(logging.Formatter(RUN_FORMAT))
        handler.setLevel(_level())
        for logger in pending:
            logger.addHandler(handler)
    return path
