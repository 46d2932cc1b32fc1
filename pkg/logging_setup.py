"""
Logging Setup for the fluctuation lab.

All records go through one queue drained by a listener thread, so Monte Carlo
workers never wait on file I/O. The listener feeds:
- a rotating log file next to the run outputs
- the console (stderr; stdout carries the banner and verdict lines)

Every record carries the run label (preset and seed) so logs of parallel
runs can be told apart after the fact.
"""

import logging
import os
import threading
from logging.handlers import RotatingFileHandler, QueueHandler, QueueListener
from queue import Queue
from typing import Callable, Dict, Tuple

# Thread, run label, module, function and line number
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(threadName)s {%(run)s} %(module)s:%(funcName)s:%(lineno)d - %(message)s'

# log level -> (root level, file level, console level)
LEVELS: Dict[str, Tuple[int, int, int]] = {
    "DEBUG": (logging.DEBUG, logging.DEBUG, logging.INFO),
    "INFO": (logging.INFO, logging.DEBUG, logging.INFO),
    "NONE": (logging.INFO, logging.CRITICAL, logging.CRITICAL),
}

# Third-party loggers kept at WARNING
QUIET_LOGGERS = ("scipy", "numpy", "pydantic")


class RunLabelFilter(logging.Filter):
    """Stamp records with the run label unless a caller already set one."""

    def __init__(self, run_label: str):
        super().__init__()
        self.run_label = run_label

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "run"):
            record.run = self.run_label
        return True


def _file_handler(path: str, level: int, max_bytes: int, backup_count: int) -> logging.Handler:
    handler = RotatingFileHandler(path, maxBytes=max_bytes, backupCount=backup_count, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    return handler


def _console_handler(level: int) -> logging.Handler:
    handler = logging.StreamHandler()
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    return handler


def setup_logging(
    log_level: str,
    log_file_name: str,
    log_dir: str,
    version: str = "",
    script_name: str = "fluctlab",
    run_label: str = "-",
    max_bytes: int = 4*1024*1024,
    backup_count: int = 5,
) -> Tuple[logging.Logger, Callable[[], None]]:
    """
    Route all logging through a queue to a rotating file and the console.

    Args:
        log_level: "DEBUG", "INFO" or "NONE"
        log_file_name: Name of the log file
        log_dir: Directory of the log file (created if missing)
        version: Version string for the startup line
        script_name: Program name for the startup line
        run_label: Label stamped on every record, e.g. "crit-exp-B2:20240601"
        max_bytes: Log file size before rotation
        backup_count: Rotated files kept

    Returns:
        (logger, stop_logging); stop_logging drains the queue, joins the
        listener thread and detaches the handlers
    """
    if log_level not in LEVELS:
        raise ValueError(f"unknown log level {log_level!r}; expected one of {', '.join(LEVELS)}")
    root_level, file_level, console_level = LEVELS[log_level]

    os.makedirs(log_dir, exist_ok=True)
    file_handler = _file_handler(os.path.join(log_dir, log_file_name), file_level, max_bytes, backup_count)
    console_handler = _console_handler(console_level)

    log_queue = Queue()
    queue_handler = QueueHandler(log_queue)
    queue_handler.addFilter(RunLabelFilter(run_label))

    root_logger = logging.getLogger()
    root_logger.handlers = []
    root_logger.setLevel(root_level)
    root_logger.addHandler(queue_handler)
    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    # Listener Thread
    stop_event = threading.Event()
    started = threading.Event()

    def log_listener_thread():
        listener = QueueListener(log_queue, file_handler, console_handler, respect_handler_level=True)
        listener.start()
        started.set()
        stop_event.wait()
        listener.stop()

    logging_thread = threading.Thread(target=log_listener_thread, name="LoggingThread", daemon=False)
    logging_thread.start()
    started.wait()

    logger = logging.getLogger(script_name)
    version_str = f" v{version}" if version else ""
    logger.info(f"sys.init: >----- Starting {script_name}{version_str}. Initializing...")

    def stop_logging():
        stop_event.set()
        logging_thread.join()
        root_logger.removeHandler(queue_handler)
        file_handler.close()

    return logger, stop_logging
