""" Logging for `gbnet`: every module logs through a child of the `gbnet` logger
"""
import functools
import logging
from pathlib import Path
from typing import Any, Callable

PACKAGE_LOGGER = "gbnet"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s %(lineno)d - %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def _attach(
    logger: logging.Logger, handler: logging.Handler, level: str, formatter: logging.Formatter
) -> None:
    handler.setLevel(level.upper())
    handler.setFormatter(formatter)
    logger.addHandler(handler)


def init_logger(
    logger_name: str = PACKAGE_LOGGER,
    log_level_for_console: str = "info",
    log_level_for_file: str = "debug",
    save_dir: str | Path | None = None,
) -> logging.Logger:
    """
    Set up the package logger; called once by the command line

    Args:
        logger_name: name for the logger; also the stem of the log file
        log_level_for_console: minimum level of messages on the console
        log_level_for_file: minimum level of messages in the file
        save_dir: if not `None`, also log to `save_dir/<logger_name>.txt`

    Returns:
        the logger

    Example:
        logger = init_logger("gbnet", save_dir="logs")

        logs `INFO` and above (epochs, trials, divergences) to the console and
        everything down to `DEBUG` (one line per batch) to `logs/gbnet.txt`.
        A second call replaces the handlers of the first.
    """
    logger = logging.getLogger(logger_name)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    while logger.handlers:
        old = logger.handlers[0]
        logger.removeHandler(old)
        old.close()

    formatter = logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT)
    _attach(logger, logging.StreamHandler(), log_level_for_console, formatter)
    if save_dir is not None:
        log_dir = Path(save_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        _attach(
            logger,
            logging.FileHandler(log_dir / f"{logger_name}.txt"),
            log_level_for_file,
            formatter,
        )
    return logger


def log_execution(func: Callable) -> Callable:
    """Decorator logging entry to and exit from `func` at `DEBUG` level, on its module's logger"""
    logger = get_logger(func.__module__)

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        logger.debug(f"entering {func.__qualname__}")
        result = func(*args, **kwargs)
        logger.debug(f"leaving {func.__qualname__}")
        return result

    return wrapper


def get_logger(logger_name: str) -> logging.Logger:
    """the logger of a module; names under `gbnet` reach the handlers of `init_logger`"""
    return logging.getLogger(logger_name)
