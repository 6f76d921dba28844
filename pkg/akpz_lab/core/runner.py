"""Thread-pool helper for chunked, order-preserving numerical work."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Sequence, TypeVar

from rich.console import Console

from akpz_lab.utils.env import thread_cap
from akpz_lab.utils.logging_utils import MessageHandler

T = TypeVar("T")
R = TypeVar("R")


class ParallelRunner:
    """Run independent chunks of work on a thread pool with a progress spinner.

    Results always come back in input order, whatever order the workers
    finish in.
    """

    def __init__(self, workers: int | None = None, console: Console | None = None) -> None:
        """Initialize the runner.

        Args:
            workers: Worker cap; defaults to ``AKPZ_THREADS`` or the CPU count.
            console: The Rich Console object to use for output.
        """
        self.workers = workers if workers is not None else thread_cap()
        self.messages = MessageHandler(console=console)

    def map_chunks(
        self,
        func: Callable[[Sequence[T]], list[R]],
        items: Sequence[T],
        chunk_size: int = 64,
        text: str | None = None,
    ) -> list[R]:
        """Apply *func* to consecutive chunks of *items* and concatenate the results.

        With *text* a progress bar counts finished chunks; leave it out when
        already running under :meth:`run`, whose spinner owns the console.
        """
        chunks = [items[start : start + chunk_size] for start in range(0, len(items), chunk_size)]
        if not chunks:
            return []
        workers = max(1, min(self.workers, len(chunks)))
        logging.debug("Running %d chunks on %d workers", len(chunks), workers)
        if text is None:
            return self._flatten(self._map(func, chunks, workers, lambda: None))
        with self.messages.chunk_progress(text, len(chunks)) as advance:
            return self._flatten(self._map(func, chunks, workers, advance))

    @staticmethod
    def _map(
        func: Callable[[Sequence[T]], list[R]],
        chunks: list[Sequence[T]],
        workers: int,
        advance: Callable[[], None],
    ) -> list[list[R]]:
        def step(chunk: Sequence[T]) -> list[R]:
            result = func(chunk)
            advance()
            return result

        if workers == 1:
            return [step(chunk) for chunk in chunks]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(step, chunks))

    @staticmethod
    def _flatten(results: list[list[R]]) -> list[R]:
        return [item for chunk in results for item in chunk]

    def run(self, text: str, operation: Callable[..., T], *args: Any, **kwargs: Any) -> T:
        """Execute *operation* with a spinner.

        Args:
            text: The text to display next to the spinner.
            operation: The operation to run.
            *args: Positional arguments to pass to the operation.
            **kwargs: Keyword arguments to pass to the operation.
        """
        return self.messages.with_spinner(text, operation, *args, **kwargs)
