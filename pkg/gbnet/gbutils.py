"""
Contains the exceptions and the general utilities used across `gbnet`.
"""
import logging
import traceback
from pathlib import Path
from typing import cast

import numpy as np


class GbnetError(Exception):
    """base class for all errors raised by `gbnet`"""


class DimensionError(GbnetError, ValueError):
    """shapes do not agree, or an axis is invalid"""


class ConfigurationError(GbnetError, ValueError):
    """an unknown tag or an invalid configuration"""


class DomainError(GbnetError, ValueError):
    """an argument is outside the domain of the operation"""


class StateError(GbnetError, RuntimeError):
    """an operation was called in the wrong state, e.g. backward before forward"""


class RecordingError(GbnetError, ValueError):
    """diagnostics were recorded inconsistently"""


class FormatError(GbnetError, ValueError):
    """a binary file does not follow its published format

    Attributes:
        offset: the byte offset where parsing failed, if known
        record: the index of the faulty record, if known
    """

    def __init__(
        self, msg: str, offset: int | None = None, record: int | None = None
    ) -> None:
        super().__init__(msg)
        self.offset = offset
        self.record = record


def gb_name_func(back: int = 2) -> str:
    """
    get the name of the current function, or further back in stack

    Args:
        back: 2 is current function, 3 the function that called it etc

    Returns:
        the name of the function
    """
    stack = traceback.extract_stack()
    *_, func_name, _ = stack[-back]
    return cast(str, func_name)


def gb_error_abort(
    msg: str = "error, aborting",
    error_class: type[GbnetError] = GbnetError,
    **kwargs: int | None,
) -> None:
    """
    report an error and raise it

    Args:
        msg: a message
        error_class: the exception class to raise
        kwargs: passed on to `error_class` (e.g. `offset` for a `FormatError`)

    Returns:
        never; logs the message prefixed with the name of the calling function
        and raises `error_class`
    """
    full_msg = f"{gb_name_func(3)}: {msg}"
    logging.getLogger("gbnet").error(full_msg)
    raise error_class(full_msg, **kwargs)


def final_s(n: int, word: str) -> str:
    """
    pluralizes word if n > 1

    Args:
        n: how many times
        word: to be pluralized, maybe

    Returns:
        `1 word` or `n words`
    """
    suffix = "s" if n > 1 else ""
    return f"{n} {word}{suffix}"


def print_stars(title: str | None = None, n: int = 70) -> None:
    """
    prints a title within stars

    Args:
        title:  title
        n: number of stars on line

    Returns:
        prints a starred line, or two around the title
    """
    line_stars = "*" * n
    print()
    print(line_stars)
    if title:
        print(title.center(n))
        print(line_stars)
    print()


def mkdir_if_needed(p: Path | str) -> Path:
    """
    create the directory if it does not exist

    Args:
        p: a path

    Returns:
        the directory Path
    """
    q = Path(p)
    if q.exists() and not q.is_dir():
        raise NotADirectoryError(f"mkdir_if_needed: {q} exists and is not a directory")
    if not q.exists():
        q.mkdir(parents=True, exist_ok=True)
    return q


def median_of(values: list[float]) -> float:
    """
    the median of a list of numbers: the middle value for an odd count,
    the mean of the two middle values for an even count

    Args:
        values: a non-empty list

    Returns:
        the median
    """
    if not values:
        gb_error_abort("cannot take the median of an empty list", DomainError)
    return float(np.median(np.asarray(values, dtype=np.float64)))
