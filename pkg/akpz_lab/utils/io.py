"""CSV and JSON artifact emission.

Reals are written in ``%.16e`` so that identical runs produce byte-identical
bodies.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from akpz_lab import __version__
from akpz_lab.core.dimer_lattice import get_model
from akpz_lab.core.shapes import ComplexField, GridGeometry, HeightField
from akpz_lab.exceptions import ConfigError, _jsonable

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.16e"


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write *rows* under *header*; floats in fixed scientific notation."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([_cell(value) for value in row])
            count += 1
    logger.debug("Wrote %d rows to %s", count, path)
    return path


def write_json(path: Path, payload: dict[str, Any]) -> Path:
    """Write *payload* as indented, key-sorted JSON."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps({k: _jsonable(v) for k, v in payload.items()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


def read_json(path: Path) -> dict[str, Any]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read JSON file {path}: {exc}", key=str(path)) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object", key=str(path))
    return data


def _field_header(geometry: GridGeometry, model: str | None, kind: str) -> dict[str, Any]:
    return {
        "kind": kind,
        "origin": list(geometry.origin),
        "spacing": list(geometry.spacing),
        "shape": list(geometry.shape),
        "model": model,
        "branch": "principal",
        "version": __version__,
    }


def write_height_field(stem: Path, h: HeightField) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (x1, x2, h) and ``<stem>.json`` (grid header)."""
    x1, x2 = h.geometry.coordinates()
    rows = zip(x1.ravel(), x2.ravel(), h.values.ravel())
    csv_path = write_csv(stem.with_suffix(".csv"), ("x1", "x2", "h"), rows)
    json_path = write_json(stem.with_suffix(".json"), _field_header(h.geometry, h.model_name, "height"))
    return csv_path, json_path


def write_complex_field(stem: Path, zf: ComplexField) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (x1, x2, re_z, im_z, valid) and ``<stem>.json``."""
    x1, x2 = zf.geometry.coordinates()
    rows = zip(x1.ravel(), x2.ravel(), zf.z.real.ravel(), zf.z.imag.ravel(), zf.mask.ravel())
    csv_path = write_csv(stem.with_suffix(".csv"), ("x1", "x2", "re_z", "im_z", "valid"), rows)
    header = _field_header(zf.geometry, zf.model.name, "complex")
    header["branch_consistent"] = zf.branch_consistent
    return csv_path, write_json(stem.with_suffix(".json"), header)


def read_height_field(stem: Path) -> HeightField:
    """Read a height field written by :func:`write_height_field`."""
    header = read_json(stem.with_suffix(".json"))
    try:
        geometry = GridGeometry(
            origin=tuple(header["origin"]), spacing=tuple(header["spacing"]), shape=tuple(header["shape"])
        )
    except KeyError as exc:
        raise ConfigError(f"height field header {stem} lacks {exc}", key=str(exc)) from None
    model = header.get("model")
    if model is not None:
        get_model(model)
    data = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != geometry.shape[0] * geometry.shape[1]:
        raise ConfigError(f"{stem}.csv does not match its header shape {geometry.shape}", key="shape")
    return HeightField(data[:, 2].reshape(geometry.shape), geometry, model)
