"""Tests for the utility functions in akpz_lab.utils and the runner."""

import csv
import io
import json
import logging
import threading
import time
from pathlib import Path

import numpy as np
import pytest
from rich.console import Console

from akpz_lab.core.dimer_lattice import HONEYCOMB
from akpz_lab.core.runner import ParallelRunner
from akpz_lab.core.shapes import ComplexField, GridGeometry, HeightField
from akpz_lab.exceptions import ConfigError
from akpz_lab.utils.config_generation import generate_config
from akpz_lab.utils.env import THREADS_ENV, get_env, get_int_env, thread_cap
from akpz_lab.utils.finite_diff import (
    central_gradient,
    grid_gradient,
    grid_hessian,
    hessian_richardson,
    laplacian_5pt,
    richardson,
    taylor_stencil,
)
from akpz_lab.utils.input_validation import (
    parse_extent,
    parse_floats,
    parse_grid,
    parse_seed,
    validate_output_dir,
    validate_positive,
    validate_shape_recipe,
)
from akpz_lab.utils.io import (
    read_height_field,
    read_json,
    write_complex_field,
    write_csv,
    write_height_field,
    write_json,
)

# --- Tests for finite_diff.py ---


def _cubic(points):
    x, y = points[..., 0], points[..., 1]
    return x**3 + 2 * x * y + y**2


def test_central_gradient_of_quadratic_is_exact():
    """Central differences are exact on quadratics."""
    points = np.array([[0.3, -0.2], [1.0, 2.0]])
    gradient = central_gradient(lambda p: p[..., 0] ** 2 + p[..., 0] * p[..., 1], points, 1e-3)
    assert np.allclose(gradient, [[0.4, 0.3], [4.0, 1.0]], atol=1e-9)


def test_hessian_richardson_of_cubic():
    """Richardson removes the h^2 term of the cubic's Hessian."""
    estimate = hessian_richardson(_cubic, np.array([0.5, 0.25]), 1e-2)
    assert np.allclose(estimate.matrix, [[3.0, 2.0], [2.0, 2.0]], atol=1e-7)
    assert estimate.asymmetry < 1e-7


def test_taylor_stencil():
    """Fourth-order gradient and second-order Hessian from one call."""
    value, gradient, hessian = taylor_stencil(_cubic, (0.5, 0.25), 1e-3)
    assert value == pytest.approx(0.125 + 0.25 + 0.0625)
    assert np.allclose(gradient, [0.75 + 0.5, 1.0 + 0.5], atol=1e-10)
    assert np.allclose(hessian, [[3.0, 2.0], [2.0, 2.0]], atol=1e-5)


def test_richardson():
    """Combining O(h^2) estimates cancels the leading error."""
    assert richardson(1.0 + 4e-2, 1.0 + 1e-2) == pytest.approx(1.0)


def test_grid_stencils_and_ring():
    """Grid derivatives are exact on quadratics and nan on the ring."""
    x1, x2 = np.meshgrid(np.linspace(0, 1, 6), np.linspace(0, 2, 5), indexing="ij")
    values = x1**2 + 3 * x1 * x2 - x2**2
    d1, d2 = grid_gradient(values, 0.2, 0.5)
    h11, h12, h22 = grid_hessian(values, 0.2, 0.5)
    assert np.all(np.isnan(d1[0])) and np.all(np.isnan(h12[:, -1]))
    inner = (slice(1, -1), slice(1, -1))
    assert np.allclose(d1[inner], (2 * x1 + 3 * x2)[inner])
    assert np.allclose(d2[inner], (3 * x1 - 2 * x2)[inner])
    assert np.allclose(h11[inner], 2.0) and np.allclose(h12[inner], 3.0) and np.allclose(h22[inner], -2.0)


def test_laplacian_5pt():
    """|z|^2 has Laplacian 4; Re z^2 is harmonic."""
    z = np.array([0.3 + 0.4j, 1.0 + 2.0j])
    assert np.allclose(laplacian_5pt(lambda w: np.abs(w) ** 2, z, 1e-3), 4.0, rtol=1e-5)
    assert np.allclose(laplacian_5pt(lambda w: np.real(w**2), z, 1e-3), 0.0, atol=1e-5)


# --- Tests for runner.py ---


def test_map_chunks_preserves_order():
    """Results come back in input order even when chunks finish out of order."""

    def slow_square(chunk):
        time.sleep(0.01 * (len(chunk) % 3))
        return [x * x for x in chunk]

    runner = ParallelRunner(workers=4, console=Console(file=io.StringIO()))
    items = list(range(50))
    assert runner.map_chunks(slow_square, items, chunk_size=7) == [x * x for x in items]
    assert runner.map_chunks(slow_square, [], chunk_size=7) == []


def test_map_chunks_with_progress_text():
    """A progress label does not change the results."""
    runner = ParallelRunner(workers=2, console=Console(file=io.StringIO()))
    items = list(range(20))
    result = runner.map_chunks(lambda c: [x + 1 for x in c], items, chunk_size=3, text="Adding")
    assert result == [x + 1 for x in items]


def test_map_chunks_uses_threads():
    """Several workers really run chunks concurrently."""
    seen = set()

    def record(chunk):
        seen.add(threading.get_ident())
        time.sleep(0.02)
        return list(chunk)

    ParallelRunner(workers=3, console=Console(file=io.StringIO())).map_chunks(record, list(range(9)), 3)
    assert len(seen) > 1


def test_runner_defaults_to_thread_cap(monkeypatch):
    """AKPZ_THREADS caps the default worker count."""
    monkeypatch.setenv(THREADS_ENV, "3")
    assert ParallelRunner(console=Console(file=io.StringIO())).workers == 3


# --- Tests for env.py ---


def test_get_env(monkeypatch):
    """get_env returns the value or the default."""
    monkeypatch.setenv("AKPZ_TEST_VALUE", "x")
    monkeypatch.delenv("AKPZ_TEST_MISSING", raising=False)
    assert get_env("AKPZ_TEST_VALUE") == "x"
    assert get_env("AKPZ_TEST_MISSING", "fallback") == "fallback"


@pytest.mark.parametrize("raw", ["zero", "0", "-2"])
def test_get_int_env_rejects_bad_values(monkeypatch, raw: str):
    """Non-integers and values below one are configuration errors."""
    monkeypatch.setenv(THREADS_ENV, raw)
    with pytest.raises(ConfigError) as exc_info:
        thread_cap()
    assert exc_info.value.details["key"] == THREADS_ENV


def test_get_int_env_default(monkeypatch):
    """An unset or blank variable gives the default."""
    monkeypatch.setenv(THREADS_ENV, " ")
    assert get_int_env(THREADS_ENV, 5) == 5


# --- Tests for input_validation.py ---


def test_parse_grid():
    """Grids are n1xn2 with at least three nodes per axis."""
    assert parse_grid("65x33") == (65, 33)
    assert parse_grid(" 5 X 7 ") == (5, 7)
    for bad in ("65", "2x9", "ax9"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_parse_floats_and_extent():
    """Comma separated numbers with a count check."""
    assert parse_floats("0.3, 0.25", 2, "rho") == (0.3, 0.25)
    assert parse_extent("0,1,-1,1") == (0.0, 1.0, -1.0, 1.0)
    with pytest.raises(ConfigError):
        parse_floats("0.3", 2, "rho")
    with pytest.raises(ConfigError):
        parse_extent("0,1,1,1")


def test_parse_seed():
    """Complex seeds use i for the imaginary unit."""
    assert parse_seed("0.75+0.25i") == complex(0.75, 0.25)
    assert parse_seed(None) is None
    assert parse_seed("") is None
    with pytest.raises(ConfigError):
        parse_seed("0.75+")


def test_validate_shape_recipe():
    """Only known recipe prefixes pass."""
    assert validate_shape_recipe("sine:0.3,0.3,0.01") == "sine:0.3,0.3,0.01"
    with pytest.raises(ConfigError):
        validate_shape_recipe("spline:1")


def test_validate_positive():
    """Zero is allowed only on request."""
    validate_positive("T", 0.0, allow_zero=True)
    validate_positive("nu", None)
    with pytest.raises(ConfigError):
        validate_positive("dt", 0.0)
    with pytest.raises(ConfigError):
        validate_positive("T", -1.0, allow_zero=True)


def test_validate_output_dir(tmp_path: Path, caplog):
    """Existing files cannot be output directories."""
    with caplog.at_level(logging.DEBUG):
        assert validate_output_dir(tmp_path / "new") == tmp_path / "new"
    assert "Checking output directory" in caplog.text
    target = tmp_path / "file"
    target.touch()
    with pytest.raises(ConfigError):
        validate_output_dir(target)


# --- Tests for io.py ---


def test_write_csv_formats_values(tmp_path: Path):
    """Floats use 17 significant digits, booleans are lower case."""
    path = write_csv(tmp_path / "sub" / "t.csv", ("a", "b", "c", "d"), [(0.1, 3, True, "x")])
    with path.open() as handle:
        rows = list(csv.reader(handle))
    assert rows == [["a", "b", "c", "d"], ["1.0000000000000001e-01", "3", "true", "x"]]


def test_write_json_is_sorted_and_plain(tmp_path: Path):
    """Complex values and numpy arrays become lists."""
    path = write_json(tmp_path / "m.json", {"b": np.array([1.0, 2.0]), "a": 1j})
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [0.0, 1.0], "b": [1.0, 2.0]}


def test_read_json_errors(tmp_path: Path):
    """Unreadable, malformed or non-object files are configuration errors."""
    with pytest.raises(ConfigError):
        read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        read_json(bad)


def test_height_field_files(tmp_path: Path):
    """Height fields are written with a header and read back."""
    geometry = GridGeometry.from_extent((0.0, 1.0, -1.0, 1.0), (5, 7))
    h = HeightField.affine(geometry, (0.3, 0.2), offset=0.5, model_name="honeycomb")
    csv_path, json_path = write_height_field(tmp_path / "h", h)
    header = json.loads(json_path.read_text())
    assert header["kind"] == "height"
    assert header["shape"] == [5, 7]
    assert header["model"] == "honeycomb"
    assert len(csv_path.read_text().splitlines()) == 36
    loaded = read_height_field(tmp_path / "h")
    assert loaded.geometry == geometry
    assert np.allclose(loaded.values, h.values, atol=1e-15)


def test_read_height_field_checks_row_count(tmp_path: Path):
    """A CSV that does not match its header is rejected."""
    geometry = GridGeometry.from_extent((0.0, 1.0, 0.0, 1.0), (4, 4))
    write_height_field(tmp_path / "h", HeightField.affine(geometry, (0.3, 0.3)))
    lines = (tmp_path / "h.csv").read_text().splitlines()
    (tmp_path / "h.csv").write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(ConfigError):
        read_height_field(tmp_path / "h")


def test_complex_field_files(tmp_path: Path):
    """Complex fields carry the validity mask and the branch flag."""
    geometry = GridGeometry.from_extent((0.0, 1.0, 0.0, 1.0), (3, 3))
    zf = ComplexField.constant(0.5 + 0.5j, geometry, HONEYCOMB)
    csv_path, json_path = write_complex_field(tmp_path / "z", zf)
    assert csv_path.read_text().splitlines()[0] == "x1,x2,re_z,im_z,valid"
    assert csv_path.read_text().splitlines()[1].endswith(",true")
    assert json.loads(json_path.read_text())["branch_consistent"] is True


# --- Tests for config_generation.py ---


def test_generate_config_creates_new(tmp_path: Path, caplog):
    """Verify a template is generated if it doesn't exist."""
    target = tmp_path / "map.json"
    with caplog.at_level(logging.INFO):
        assert generate_config("akpz-map", target) == target
    assert "Generating akpz-map config template" in caplog.text
    assert json.loads(target.read_text())["speed"] == "im-z"


def test_generate_config_skips_existing(tmp_path: Path, caplog):
    """Verify existing templates are not overwritten."""
    target = tmp_path / "map.json"
    target.write_text("{}")
    with caplog.at_level(logging.INFO):
        assert generate_config("akpz-map", target) is None
    assert "already exists" in caplog.text
    assert target.read_text() == "{}"
