"""Rich-backed logging: root handler setup, spinners, chunk progress and result tables."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Any, Callable, Iterable, Iterator, Mapping, TypeVar

from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

T = TypeVar("T")

logger = logging.getLogger("akpz_lab")

ASCII_ART = r"""
    _    _  ______  _____    _       _
   / \  | |/ /  _ \|__  /   | | __ _| |__
  / _ \ | ' /| |_) | / /____| |/ _` | '_ \
 / ___ \| . \|  __/ / /|____| | (_| | |_) |
/_/   \_\_|\_\_|   /____|   |_|\__,_|_.__/

   growth speeds, surface tension, Burgers shapes
"""


def _level(verbose: bool, quiet: bool) -> int:
    if quiet:
        return logging.ERROR
    return logging.DEBUG if verbose else logging.INFO


def _shows_info() -> bool:
    return logging.getLogger().level <= logging.INFO


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.3e}"
    return str(value)


class MessageHandler:
    """User-facing output of one run.

    Plain messages go through the ``akpz_lab`` logger so ``--quiet`` and
    ``--verbose`` apply to them; spinners, progress bars and tables are drawn
    on the handler's console and are skipped entirely above INFO.
    """

    def __init__(self, console: Console | None = None) -> None:
        self.console = console or Console(stderr=True)

    def success(self, message: str) -> None:
        if _shows_info():
            self.console.print(f"[green]✓ {message}[/green]")

    def info(self, message: str, *args: Any) -> None:  # noqa: D401
        """Log at INFO; *args* are applied printf-style like :pymeth:`logging.info`."""
        logger.info(message, *args)

    def warning(self, message: str, *args: Any) -> None:  # noqa: D401
        """Log at WARNING."""
        logger.warning(message, *args)

    def error(self, message: str, *args: Any) -> None:  # noqa: D401
        """Log at ERROR."""
        logger.error(message, *args)

    def with_spinner(self, text: str, operation: Callable[..., T], *args: Any, **kwargs: Any) -> T:
        """Run *operation* under a spinner and report success or failure.

        Returns:
            Whatever *operation* returns.

        Raises:
            Exception: Anything *operation* raises, after logging ``<text> failed``.
        """
        text = text.rstrip(" ")
        if not _shows_info():
            return operation(*args, **kwargs)
        with self.console.status(f"[cyan]{text}[/cyan]", spinner="dots"):
            try:
                result = operation(*args, **kwargs)
            except Exception:
                self.error("%s failed", text)
                raise
        self.success(text)
        return result

    @contextmanager
    def chunk_progress(self, text: str, total: int) -> Iterator[Callable[[], None]]:
        """Yield a callable advancing a ``done/total`` bar by one chunk.

        A single chunk, or output above INFO, gets a no-op instead of a bar.
        """
        if total <= 1 or not _shows_info():
            yield lambda: None
            return
        progress = Progress(
            TextColumn("[cyan]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            console=self.console,
            transient=True,
        )
        with progress:
            task = progress.add_task(text, total=total)
            yield lambda: progress.advance(task)

    def summary_table(self, title: str, summary: Mapping[str, Any]) -> None:
        """Print the scalar entries of an experiment summary; nested entries are left to the manifest."""
        if not _shows_info():
            return
        table = Table(title=title, show_header=False)
        table.add_column("key", style="bold")
        table.add_column("value")
        for key, value in summary.items():
            if isinstance(value, (Mapping, list, tuple)):
                continue
            table.add_row(key, _format_value(value))
        self.console.print(table)

    def verdict_table(self, title: str, rows: Iterable[tuple[str, bool, str]]) -> None:
        """Print a PASS/FAIL table of (check name, passed, detail) rows."""
        table = Table(title=title)
        table.add_column("check")
        table.add_column("result")
        table.add_column("detail")
        for name, passed, detail in rows:
            verdict = "[green]PASS[/green]" if passed else "[red]FAIL[/red]"
            table.add_row(name, verdict, detail)
        self.console.print(table)


def configure(verbose: bool = False, quiet: bool = False) -> None:
    """Set the root level and install one RichHandler on stderr.

    Args:
        verbose: DEBUG instead of INFO.
        quiet:   ERROR, overriding *verbose*.
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(_level(verbose, quiet))
    # Handlers added by other tooling (caplog) stay in place.
    if not any(isinstance(h, RichHandler) for h in root_logger.handlers):
        root_logger.addHandler(
            RichHandler(
                console=Console(stderr=True),
                rich_tracebacks=True,
                show_path=False,
                show_time=False,
            )
        )


def print_ascii_art() -> None:
    if _shows_info():
        Console(stderr=True).print(f"[cyan]{ASCII_ART}[/cyan]")


def get_message_handler() -> MessageHandler:
    return MessageHandler()
