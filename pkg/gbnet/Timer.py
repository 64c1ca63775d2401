"""
utilities to time code
"""

import time
from collections import defaultdict
from contextlib import contextmanager
from functools import wraps
from typing import Any, Callable, Iterable, Iterator

from gbnet.gb_logging import get_logger


def timeit(func: Callable) -> Callable:
    """
    Decorator to time a function; the duration is logged at `INFO` level
    """
    logger = get_logger(func.__module__)

    @wraps(func)
    def wrapper(*args: Iterable, **kwargs: dict) -> Any:
        start = time.perf_counter()
        result = func(*args, **kwargs)
        end = time.perf_counter()
        logger.info(f"{func.__name__} executed in {end - start:.6f} seconds")
        return result

    return wrapper


class Timer:
    """
    Accumulates elapsed time per named stage::

       timer = Timer()
       for batch in batches:
           with timer.stage("train"):
               ...
       with timer.stage("eval"):
           ...
       logger.info(timer.report())

    `elapsed` is the total over all stages.
    Use `Timer(time.process_time)` to get only CPU time.
    """

    def __init__(self, func: Callable[[], float] = time.perf_counter) -> None:
        self._func = func
        self.stages: dict[str, float] = defaultdict(float)
        self._open: set[str] = set()

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        if name in self._open:
            raise RuntimeError(f"Stage {name} already started")
        self._open.add(name)
        start = self._func()
        try:
            yield
        finally:
            self.stages[name] += self._func() - start
            self._open.discard(name)

    @property
    def elapsed(self) -> float:
        return sum(self.stages.values())

    def reset(self) -> None:
        self.stages.clear()

    def report(self) -> str:
        """one line with the time spent in each stage, in order of first use"""
        parts = [f"{name} {secs:.3f}s" for name, secs in self.stages.items()]
        return ", ".join(parts) + f" (total {self.elapsed:.3f}s)"
