"""Unit tests for the ExperimentService and the shape recipes."""

from __future__ import annotations

import io
import json
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
from rich.console import Console

from akpz_lab.config import ExperimentConfig
from akpz_lab.core.dimer_lattice import HONEYCOMB
from akpz_lab.core.runner import ParallelRunner
from akpz_lab.core.service import ExperimentService, shape_from_recipe
from akpz_lab.core.shapes import GridGeometry, HeightField
from akpz_lab.exceptions import ConfigError
from akpz_lab.utils.io import write_height_field
from tests.oracles import lozenge_hessian, lozenge_sigma

UNIT = GridGeometry.from_extent((0.0, 1.0, 0.0, 1.0), (9, 9))


@pytest.fixture
def _runner() -> ParallelRunner:
    """A single-worker runner printing into a buffer."""
    return ParallelRunner(workers=1, console=Console(file=io.StringIO()))


def _service(experiment: str, params: dict, runner: ParallelRunner) -> ExperimentService:
    return ExperimentService(ExperimentConfig.from_cli(experiment, params), runner)


# ---------------------------------------------------------------------------
# Shape recipes
# ---------------------------------------------------------------------------


def test_affine_recipe():
    """affine:<rho> is the plane through the origin."""
    h = shape_from_recipe("affine:0.3,0.25", HONEYCOMB, UNIT)
    x1, x2 = UNIT.coordinates()
    assert np.allclose(h.values, 0.3 * x1 + 0.25 * x2)
    assert h.model_name == "honeycomb"


def test_sine_recipe_keeps_affine_boundary():
    """The bump of sine:<rho,amp> vanishes on the boundary."""
    h = shape_from_recipe("sine:0.3,0.25,0.02", HONEYCOMB, UNIT)
    plane = shape_from_recipe("affine:0.3,0.25", HONEYCOMB, UNIT)
    ring = UNIT.ring_mask()
    assert np.allclose(h.values[ring], plane.values[ring], atol=1e-15)
    assert h.values[4, 4] - plane.values[4, 4] == pytest.approx(0.02)


def test_burgers_recipe_builds_heights():
    """burgers:<C> integrates the implicit solution."""
    geometry = GridGeometry.from_extent((0.5, 1.5, -0.5, 0.5), (9, 9))
    h = shape_from_recipe("burgers:const-i", HONEYCOMB, geometry)
    assert h.values.shape == (9, 9)
    assert h.values[0, 0] == 0.0


def test_file_recipe_reads_a_saved_field(tmp_path: Path):
    """file:<stem> reloads a field written by write_height_field."""
    original = HeightField.affine(UNIT, (0.2, 0.4), offset=1.0, model_name="honeycomb")
    write_height_field(tmp_path / "h0", original)
    loaded = shape_from_recipe(f"file:{tmp_path / 'h0'}", HONEYCOMB, UNIT)
    assert loaded.geometry == UNIT
    assert np.allclose(loaded.values, original.values, atol=1e-14)


@pytest.mark.parametrize("recipe", ["spline:1,2", "affine:0.3", "sine:a,b,c"])
def test_bad_recipes(recipe: str):
    """Unknown or malformed recipes are configuration errors."""
    with pytest.raises(ConfigError):
        shape_from_recipe(recipe, HONEYCOMB, UNIT)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def test_surface_tension_at_one_slope(tmp_path: Path, _runner: ParallelRunner):
    """The dual route reproduces the lozenge formulas."""
    service = _service(
        "surface-tension", {"rho": "0.3,0.25", "sigma_method": "dual", "out": tmp_path}, _runner
    )
    summary = service.execute()
    assert summary["slopes"] == 1
    row = np.loadtxt(tmp_path / "surface_tension.csv", delimiter=",", skiprows=1, ndmin=2)[0]
    assert row[2] == pytest.approx(lozenge_sigma(0.3, 0.25), abs=1e-9)
    expected = lozenge_hessian(0.3, 0.25)
    assert row[3:6] == pytest.approx([expected[0, 0], expected[0, 1], expected[1, 1]], rel=1e-7)
    assert summary["min_eigenvalue"] > 0


def test_surface_tension_samples_are_seeded(tmp_path: Path, _runner: ParallelRunner):
    """The same seed gives the same sampled slopes."""
    params = {"model": "square", "samples": 5, "seed": 3, "sigma_method": "dual"}
    for name in ("a", "b"):
        _service("surface-tension", {**params, "out": tmp_path / name}, _runner).execute()
    first = (tmp_path / "a" / "surface_tension.csv").read_bytes()
    assert first == (tmp_path / "b" / "surface_tension.csv").read_bytes()
    assert len(first.splitlines()) == 6


def test_execute_writes_manifest(tmp_path: Path, _runner: ParallelRunner):
    """Every run leaves <experiment>.json with config, version and summary."""
    _service("harmonicity", {"speed": "abs-z2", "resolution": 5, "out": tmp_path}, _runner).execute()
    manifest = json.loads((tmp_path / "harmonicity.json").read_text())
    assert set(manifest) == {"config", "summary", "version"}
    assert manifest["summary"]["harmonic"] is False
    assert manifest["summary"]["max_abs_laplacian"] == pytest.approx(4.0, rel=1e-4)


def test_long_computations_go_through_the_runner(tmp_path: Path, _runner: ParallelRunner):
    """akpz-map wraps its classification in runner.run (spinner)."""
    service = _service("akpz-map", {"resolution": 4, "out": tmp_path}, _runner)
    with patch.object(_runner, "run", wraps=_runner.run) as run:
        service.execute()
    run.assert_called_once()
    assert (tmp_path / "akpz_map.csv").is_file()


def test_accept_records_failures(tmp_path: Path, _runner: ParallelRunner):
    """A failing check makes the summary fail and lands in accept.csv."""
    from akpz_lab.core.acceptance import CheckResult

    results = [CheckResult("ok", True, "fine"), CheckResult("bad", False, "broken")]
    with patch("akpz_lab.core.service.AcceptanceSuite") as suite:
        suite.return_value.run.return_value = results
        summary = _service("accept", {"quick": True, "out": tmp_path}, _runner).execute()
    suite.assert_called_once_with(runner=_runner, quick=True)
    assert summary["passed"] is False
    assert summary["checks"]["bad"]["passed"] is False
    lines = (tmp_path / "accept.csv").read_text().splitlines()
    assert lines[0] == "check,passed,seconds,detail"
    assert lines[2].startswith("bad,false,")
