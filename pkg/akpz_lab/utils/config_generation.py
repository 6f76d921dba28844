"""Configuration file generation utilities."""

from __future__ import annotations

from pathlib import Path

from akpz_lab.config import EXPERIMENTS, template
from akpz_lab.utils.io import write_json
from akpz_lab.utils.logging_utils import get_message_handler

# Centralised Rich-based message handler
messages = get_message_handler()

__all__: list[str] = [
    "generate_config",
]


def generate_config(experiment: str, path: Path | None = None, force: bool = False) -> Path | None:
    """Write a JSON config for *experiment* filled with the default values.

    The file goes to ``<experiment>.json`` in the working directory unless
    *path* is given. An existing file is left alone unless *force* is set.
    """
    path = path or Path(f"{experiment}.json")
    messages.info("Generating %s config template: %s", experiment, path)
    if path.exists() and not force:
        messages.warning("Configuration file already exists: %s", path)
        messages.info("Skipping to avoid overwriting existing configuration.")
        return None

    write_json(path, template(experiment))
    messages.success(f"Generated: {path}")
    messages.info("Edit the values, then run 'akpz-lab %s --config %s'.", experiment, path)
    others = [name for name in EXPERIMENTS if name != experiment]
    messages.info("Templates for the other experiments: %s", ", ".join(others))
    return path
