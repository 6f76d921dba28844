"""Input validation utilities."""

from __future__ import annotations

import logging
import re
from pathlib import Path

from akpz_lab.exceptions import ConfigError

logger = logging.getLogger(__name__)

GRID_RE = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")
SHAPE_RECIPES = ("burgers:<C>", "affine:<rho1,rho2>", "sine:<rho1,rho2,amplitude>")


def parse_grid(spec: str) -> tuple[int, int]:
    """Parse ``n1xn2`` into a node-count pair (each at least 3)."""
    match = GRID_RE.match(str(spec))
    if not match:
        raise ConfigError(f"Invalid grid: {spec!r} (expected n1xn2, e.g. 65x65)", key="grid")
    n1, n2 = int(match.group(1)), int(match.group(2))
    if min(n1, n2) < 3:
        raise ConfigError(f"Invalid grid: {spec!r} needs at least 3 nodes per axis", key="grid")
    return n1, n2


def parse_floats(spec: str, count: int, key: str) -> tuple[float, ...]:
    """Parse *count* comma separated reals."""
    parts = [part.strip() for part in str(spec).split(",")]
    try:
        values = tuple(float(part) for part in parts)
    except ValueError:
        raise ConfigError(f"Invalid {key}: {spec!r}", key=key) from None
    if len(values) != count:
        raise ConfigError(f"Invalid {key}: {spec!r} needs {count} comma separated numbers", key=key)
    return values


def parse_extent(spec: str) -> tuple[float, float, float, float]:
    """Parse ``x1min,x1max,x2min,x2max``."""
    x1min, x1max, x2min, x2max = parse_floats(spec, 4, "extent")
    if x1max <= x1min or x2max <= x2min:
        raise ConfigError(f"Invalid extent: {spec!r} is empty", key="extent")
    return x1min, x1max, x2min, x2max


def parse_seed(spec: str | None) -> complex | None:
    """Parse a complex seed such as ``0.75+0.25i``; ``None`` passes through."""
    if spec is None or str(spec).strip() == "":
        return None
    try:
        return complex(str(spec).strip().replace("i", "j"))
    except ValueError:
        raise ConfigError(f"Invalid seed: {spec!r}", key="seed") from None


def validate_shape_recipe(spec: str) -> str:
    """Check the recipe prefix of ``--shape``; the body is parsed when the shape is built."""
    prefix = str(spec).partition(":")[0]
    if prefix not in {"burgers", "affine", "sine", "file"}:
        raise ConfigError(
            f"Invalid shape: {spec!r} (choose from {', '.join(SHAPE_RECIPES)} or file:<path>)",
            key="shape",
        )
    return str(spec)


def validate_positive(key: str, value: float | None, allow_zero: bool = False) -> None:
    """Reject negative (or zero) numeric settings."""
    if value is None:
        return
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"Invalid {key}: {value} must be {'>= 0' if allow_zero else '> 0'}", key=key)


def validate_output_dir(path: Path) -> Path:
    """Ensure the output directory exists or can be created."""
    logger.debug("Checking output directory %s", path)
    if path.exists() and not path.is_dir():
        raise ConfigError(f"Output path is not a directory: {path}", key="out")
    return path
