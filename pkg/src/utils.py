"""Utility functions for logging, validation, and common operations."""

import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

import config
from src.errors import ParameterError, ShapeError

T = TypeVar("T")
R = TypeVar("R")


def setup_logging(level_name: Optional[str] = None, log_dir: Optional[str] = None) -> logging.Logger:
    """
    Set up logging configuration for the application with daily files.

    Args:
        level_name: One of error|warn|info|debug (default: AMFLOW_LOG or config)
        log_dir: Directory for log files (default: AMFLOW_LOG_DIR or config)

    Returns:
        logging.Logger: Configured logger instance
    """
    level_name = (level_name or os.environ.get("AMFLOW_LOG") or config.LOG_LEVEL).lower()
    if level_name not in config.LOG_LEVELS:
        raise ParameterError(
            f"Unknown log level '{level_name}'. Expected one of: {', '.join(config.LOG_LEVELS)}"
        )
    log_dir = log_dir or os.environ.get("AMFLOW_LOG_DIR") or config.LOG_DIR
    os.makedirs(log_dir, exist_ok=True)

    # Daily log file name: amflow-YYYY-MM-DD.log
    today = datetime.now().strftime("%Y-%m-%d")
    log_file = os.path.join(log_dir, f"{config.LOG_FILE_PREFIX}-{today}.log")

    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVELS[level_name]),
        format=config.LOG_FORMAT,
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler()
        ],
        force=True
    )

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging initialized - File: {log_file}, Structured: {config.ENABLE_STRUCTURED_LOGGING}")

    return logger


def validate_same_shape(*rasters: np.ndarray, names: Optional[List[str]] = None) -> None:
    """
    Check that all rasters share their leading (height, width) dimensions.

    Args:
        rasters: Arrays of shape (H, W) or (H, W, C)
        names: Optional labels used in the error message

    Raises:
        ShapeError: If any two rasters differ in height or width
    """
    shapes = [tuple(r.shape[:2]) for r in rasters]
    if len(set(shapes)) > 1:
        labels = names or [f"raster{i}" for i in range(len(rasters))]
        detail = ", ".join(f"{n}={s}" for n, s in zip(labels, shapes))
        raise ShapeError(f"Dimension mismatch: {detail}")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """
    Write bytes to a file through a temporary file and rename.

    Readers never observe a partially written file.

    Args:
        path: Destination path
        data: File contents
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item, possibly in parallel, returning results in input order.

    Args:
        fn: Pure function applied to each item
        items: Work items
        threads: Worker cap (None: available cores; 1: run inline)

    Returns:
        List[R]: Results in the order of items
    """
    items = list(items)
    if threads is not None and threads < 1:
        raise ParameterError(f"threads must be >= 1, got {threads}")
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads or os.cpu_count()) as pool:
        return list(pool.map(fn, items))
