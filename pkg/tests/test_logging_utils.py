"""Unit tests for centralized logging utilities and Rich configuration."""

from __future__ import annotations

import io
import logging
from typing import List

import pytest
from rich.console import Console
from rich.logging import RichHandler

from akpz_lab.utils.logging_utils import MessageHandler, configure, get_message_handler


def _reset_root_logger() -> None:
    """Remove all handlers and reset the root logger level.

    Each test manipulates the root logger state via *configure()*; we must reset
    it to guarantee isolation and avoid handler leakage across tests.
    """
    root = logging.getLogger()
    root.handlers.clear()
    root.setLevel(logging.NOTSET)


@pytest.fixture(autouse=True)
def _clean_root_logger() -> None:  # noqa: D401
    """Start each test from a bare root logger."""
    _reset_root_logger()
    yield
    _reset_root_logger()


def _rich_handlers() -> List[RichHandler]:
    """Return a list of RichHandler instances currently attached to root."""
    return [h for h in logging.getLogger().handlers if isinstance(h, RichHandler)]


def _buffered() -> tuple[MessageHandler, io.StringIO]:
    buffer = io.StringIO()
    return MessageHandler(console=Console(file=buffer, width=120)), buffer


# ---------------------------------------------------------------------------
# configure() behaviour
# ---------------------------------------------------------------------------


def test_configure_installs_single_rich_handler() -> None:  # noqa: D401
    """configure() should add exactly one RichHandler, even when called twice."""
    configure()  # first call
    configure(verbose=True)  # second call should be a no-op
    assert len(_rich_handlers()) == 1


def test_configure_verbose_sets_debug_level() -> None:  # noqa: D401
    """The *verbose* flag should lower the root logger level to DEBUG."""
    configure(verbose=True)
    assert logging.getLogger().level == logging.DEBUG


def test_configure_quiet_sets_error_level() -> None:  # noqa: D401
    """The *quiet* flag should raise the root logger level to ERROR."""
    configure(verbose=True, quiet=True)
    assert logging.getLogger().level == logging.ERROR


# ---------------------------------------------------------------------------
# MessageHandler behaviour
# ---------------------------------------------------------------------------


def test_message_handler_info_emits_log(caplog):  # noqa: D401
    """messages.info() should emit an INFO level log captured by *caplog*."""
    configure()
    messages = get_message_handler()
    with caplog.at_level(logging.INFO):
        messages.info("max |Lap f| = %.1e over %d slopes", 1e-9, 12)
    assert "max |Lap f| = 1.0e-09 over 12 slopes" in caplog.text


def test_message_handler_info_is_silent_when_quiet(caplog):  # noqa: D401
    """Nothing below ERROR is emitted once *quiet* is configured."""
    configure(quiet=True)
    with caplog.at_level(logging.ERROR):
        get_message_handler().info("hidden")
    assert "hidden" not in caplog.text


def test_with_spinner_returns_result_and_reports_success() -> None:  # noqa: D401
    """with_spinner() should pass arguments through and print a checkmark."""
    configure()
    messages, buffer = _buffered()
    assert messages.with_spinner("Adding", lambda a, b=0: a + b, 2, b=3) == 5
    assert "✓ Adding" in buffer.getvalue()


def test_with_spinner_logs_failures(caplog) -> None:  # noqa: D401
    """A failing operation is logged and re-raised."""
    configure()
    messages, _ = _buffered()

    def boom() -> None:
        raise RuntimeError("no")

    with caplog.at_level(logging.INFO), pytest.raises(RuntimeError):
        messages.with_spinner("Solving", boom)
    assert "Solving failed" in caplog.text


def test_verdict_table_marks_pass_and_fail() -> None:  # noqa: D401
    """verdict_table() renders one row per check."""
    messages, buffer = _buffered()
    messages.verdict_table("acceptance", [("bijection", True, "1e-15"), ("probe", False, "too big")])
    output = buffer.getvalue()
    assert "PASS" in output
    assert "FAIL" in output
    assert "bijection" in output


def test_summary_table_skips_nested_entries() -> None:  # noqa: D401
    """summary_table() prints scalars only and formats floats and booleans."""
    configure()
    messages, buffer = _buffered()
    summary = {"slopes": 12, "harmonic": True, "worst": 1.5e-9, "counts": {"AKPZ": 1}}
    messages.summary_table("harmonicity", summary)
    output = buffer.getvalue()
    assert "slopes" in output
    assert "yes" in output
    assert "1.500e-09" in output
    assert "counts" not in output


def test_chunk_progress_is_a_no_op_when_quiet() -> None:  # noqa: D401
    """Above INFO the progress context draws nothing."""
    configure(quiet=True)
    messages, buffer = _buffered()
    with messages.chunk_progress("Chunks", 3) as advance:
        for _ in range(3):
            advance()
    assert buffer.getvalue() == ""
