"""Shared fixtures for the akpz-lab test-suite."""

from __future__ import annotations

import logging

import pytest

from akpz_lab.core.dimer_lattice import HONEYCOMB, SQUARE, DimerModel
from akpz_lab.core.shapes import (
    ComplexField,
    GridGeometry,
    HeightField,
    height_from_zfield,
    profile_from_preset,
    solve_burgers_implicit,
)

BURGERS_EXTENT = (0.5, 1.5, -0.5, 0.5)


@pytest.fixture(autouse=True)
def _isolate_root_logger():  # noqa: D401
    """Reset the root logger so handlers installed by the CLI do not leak."""
    root = logging.getLogger()
    saved = list(root.handlers), root.level
    yield
    root.handlers[:] = saved[0]
    root.setLevel(saved[1])


@pytest.fixture(params=[HONEYCOMB, SQUARE], ids=lambda m: m.name)
def model(request) -> DimerModel:
    """Both built-in dimer models."""
    return request.param


@pytest.fixture
def honeycomb() -> DimerModel:
    return HONEYCOMB


@pytest.fixture
def square() -> DimerModel:
    return SQUARE


def burgers_geometry(n: int) -> GridGeometry:
    return GridGeometry.from_extent(BURGERS_EXTENT, (n, n))


@pytest.fixture(scope="session")
def burgers_17() -> tuple[ComplexField, HeightField]:
    """``C = i`` implicit honeycomb solution on a 17 x 17 grid and its heights."""
    zf = solve_burgers_implicit(HONEYCOMB, profile_from_preset("const-i"), burgers_geometry(17))
    return zf, height_from_zfield(HONEYCOMB, zf)


@pytest.fixture(scope="session")
def burgers_33() -> tuple[ComplexField, HeightField]:
    """Same as :func:`burgers_17` with the spacing halved."""
    zf = solve_burgers_implicit(HONEYCOMB, profile_from_preset("const-i"), burgers_geometry(33))
    return zf, height_from_zfield(HONEYCOMB, zf)
