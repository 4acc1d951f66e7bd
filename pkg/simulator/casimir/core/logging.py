"""
Structured logging for command runs.

Events go to stderr as JSON lines, or in console form, and stdout is left to
the command report. ``run_context`` binds the run id and command so that every
event of a run carries them; ``map_in_context`` hands that binding on to
worker threads, which do not inherit context variables on their own.
"""

import contextvars
import logging
import sys
from concurrent.futures import Executor
from contextlib import contextmanager
from typing import Any, Callable, Iterable, Iterator, TypeVar

import structlog

T = TypeVar("T")
R = TypeVar("R")


def configure_logging(level: str = "INFO", fmt: str = "json") -> None:
    renderer: Any = (
        structlog.dev.ConsoleRenderer(colors=False)
        if fmt == "console"
        else structlog.processors.JSONRenderer()
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.add_logger_name,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            renderer,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )
    # stdout carries command reports
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO),
        force=True,
    )


def get_logger(*args: Any, **kwargs: Any) -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(*args, **kwargs)


@contextmanager
def run_context(run_id: str, command: str, **extra: Any) -> Iterator[None]:
    """Bind ``run_id``, ``command`` and ``extra`` to every event logged inside the block."""
    tokens = structlog.contextvars.bind_contextvars(run_id=run_id, command=command, **extra)
    try:
        yield
    finally:
        structlog.contextvars.reset_contextvars(**tokens)


def map_in_context(executor: Executor, func: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """``executor.map`` with each call running in a copy of the caller's context, in order."""
    futures = [executor.submit(contextvars.copy_context().run, func, item) for item in items]
    return [future.result() for future in futures]
