"""Environment variable utilities."""

from __future__ import annotations

import os
from typing import TypeVar, overload

from akpz_lab.exceptions import ConfigError

T = TypeVar("T")

THREADS_ENV = "AKPZ_THREADS"


@overload
def get_env(key: str) -> str | None: ...


@overload
def get_env(key: str, default: T) -> str | T: ...


def get_env(key: str, default: T | None = None) -> str | T | None:
    """Retrieve an environment variable with an optional default.

    Args:
        key: The name of the environment variable.
        default: The default value to return if the variable is not set.

    Returns:
        The value of the environment variable, or the default value.
    """
    return os.environ.get(key, default)


def get_int_env(key: str, default: int) -> int:
    """Retrieve a positive integer environment variable.

    Raises:
        ConfigError: If the variable is set but is not a positive integer.
    """
    raw = get_env(key)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {raw!r}", key=key) from exc
    if value < 1:
        raise ConfigError(f"{key} must be >= 1, got {value}", key=key)
    return value


def thread_cap() -> int:
    """Return the worker cap from AKPZ_THREADS (defaults to the CPU count)."""
    return get_int_env(THREADS_ENV, os.cpu_count() or 1)
