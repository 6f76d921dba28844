"""Tests for speed presets, harmonicity and the AKPZ classification."""

from __future__ import annotations

import numpy as np
import pytest

from akpz_lab.core.dimer_lattice import HONEYCOMB, SQUARE, is_liquid, z_from_slope
from akpz_lab.core.growth_speed import (
    AkpzLabel,
    SpeedFunction,
    SpeedKind,
    akpz_classify,
    akpz_map,
    classification_tolerance,
    laplacian_f,
    obstruction,
    obstruction_certificate,
    slope_grid,
    speed_eval,
    speed_from_preset,
    speed_gradient,
    speed_hessian,
    wirtinger_derivative,
)
from akpz_lab.core.runner import ParallelRunner
from akpz_lab.exceptions import ConfigError, OutsidePolygonError, ValidationError

# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "preset, harmonic",
    [("im-z", True), ("cft-domino", True), ("re-z", True), ("im-log-z", True), ("re-z2", True), ("abs-z2", False)],
)
def test_z_presets(preset: str, harmonic: bool) -> None:
    v = speed_from_preset(preset, HONEYCOMB)
    assert v.kind is SpeedKind.Z
    assert v.harmonic is harmonic


def test_const_and_quadratic_presets() -> None:
    const = speed_from_preset("const:2.5", SQUARE)
    assert speed_eval(const, (0.5, 0.5)) == pytest.approx(2.5)
    quad = speed_from_preset("quadratic:1,0,1", SQUARE)
    assert quad.kind is SpeedKind.SLOPE
    assert speed_eval(quad, (0.5, 0.25)) == pytest.approx(0.3125)


@pytest.mark.parametrize("preset", ["im-zz", "const:", "quadratic:1,2", "quadratic:a,b,c"])
def test_bad_presets(preset: str) -> None:
    with pytest.raises(ConfigError) as exc_info:
        speed_from_preset(preset, HONEYCOMB)
    assert exc_info.value.details["key"] == "speed"


def test_false_harmonic_claim_is_rejected() -> None:
    with pytest.raises(ValidationError):
        SpeedFunction("fake", SpeedKind.Z, lambda z: np.abs(z) ** 2, HONEYCOMB, harmonic=True)


def test_harmonic_flag_is_z_only() -> None:
    with pytest.raises(ValidationError):
        SpeedFunction("fake", SpeedKind.SLOPE, lambda p: p[..., 0], HONEYCOMB, harmonic=True)


def test_im_z_speed_in_closed_form() -> None:
    # Im z = sin(pi rho1) sin(pi rho2) / sin(pi (rho1 + rho2)) on the honeycomb.
    v = speed_from_preset("im-z", HONEYCOMB)
    rho1, rho2 = 0.2, 0.45
    expected = np.sin(np.pi * rho1) * np.sin(np.pi * rho2) / np.sin(np.pi * (rho1 + rho2))
    assert speed_eval(v, (rho1, rho2)) == pytest.approx(expected, rel=1e-12)


def test_speed_eval_outside_region() -> None:
    v = speed_from_preset("im-z", HONEYCOMB)
    with pytest.raises(OutsidePolygonError):
        speed_eval(v, (0.6, 0.6))


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------


def test_laplacian_of_harmonic_and_non_harmonic_speeds() -> None:
    z = np.array([0.3 + 0.5j, -1.0 + 2.0j])
    assert np.max(np.abs(laplacian_f(speed_from_preset("re-z2", HONEYCOMB), z))) < 1e-6
    assert np.allclose(laplacian_f(speed_from_preset("abs-z2", HONEYCOMB), z), 4.0, rtol=1e-6)


def test_laplacian_needs_z_speed() -> None:
    with pytest.raises(ValidationError):
        laplacian_f(speed_from_preset("quadratic:1,0,1", HONEYCOMB), 1j)


def test_wirtinger_derivative_of_re_z2() -> None:
    # f = Re z^2 has df/dz = z.
    z = 0.4 + 0.9j
    assert wirtinger_derivative(speed_from_preset("re-z2", HONEYCOMB), z) == pytest.approx(z, abs=1e-8)


def test_speed_hessian_of_quadratic() -> None:
    v = speed_from_preset("quadratic:1,0.5,-2", SQUARE)
    hessian = speed_hessian(v, np.array([[0.3, 0.6], [0.5, 0.5]]))
    expected = np.array([[2.0, 0.5], [0.5, -4.0]])
    assert np.allclose(hessian, expected, atol=1e-8)
    assert np.allclose(speed_gradient(v, (0.3, 0.6)), [0.9, -2.25], atol=1e-8)


def test_speed_hessian_step_must_fit_margin() -> None:
    v = speed_from_preset("im-z", HONEYCOMB)
    with pytest.raises(ValidationError):
        speed_hessian(v, (0.3, 0.3), step=0.02)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def test_classification_tolerance_scales_with_hessian() -> None:
    assert classification_tolerance(np.eye(2) * 0.1, tau=1e-6) == pytest.approx(1e-6)
    assert classification_tolerance(np.eye(2) * 10.0, tau=1e-6) == pytest.approx(2e-4)


def test_quadratic_controls() -> None:
    assert akpz_classify(speed_from_preset("quadratic:1,0,1", HONEYCOMB), (0.3, 0.3)).label is AkpzLabel.ISOTROPIC
    assert akpz_classify(speed_from_preset("quadratic:0,1,0", HONEYCOMB), (0.3, 0.3)).label is AkpzLabel.AKPZ
    assert akpz_classify(speed_from_preset("quadratic:1,0,0", HONEYCOMB), (0.3, 0.3)).label is AkpzLabel.DEGENERATE


def test_im_z_is_akpz_at_honeycomb_centre() -> None:
    # det D^2 v = -4 pi^4 (1 + p^2)(1 + q^2) / (p + q)^4 with p = q = cot(pi/3).
    result = akpz_classify(speed_from_preset("im-z", HONEYCOMB), (1 / 3, 1 / 3))
    p = 1.0 / np.tan(np.pi / 3)
    expected = -4.0 * np.pi**4 * (1 + p**2) ** 2 / (2 * p) ** 4
    assert result.label is AkpzLabel.AKPZ
    assert result.det == pytest.approx(expected, rel=1e-5)


def test_slope_grid_is_liquid_and_lexicographic(model) -> None:
    grid = slope_grid(model, 12, 0.02)
    assert len(grid) > 0
    assert np.all(is_liquid(model, grid, 0.02))
    order = np.lexsort((grid[:, 1], grid[:, 0]))
    assert np.array_equal(order, np.arange(len(grid)))


def test_slope_grid_rejects_zero_resolution() -> None:
    with pytest.raises(ValidationError):
        slope_grid(HONEYCOMB, 0, 0.02)


@pytest.mark.parametrize("preset", ["im-z", "re-z2", "im-log-z"])
def test_harmonic_speeds_are_never_isotropic(model, preset: str) -> None:
    v = speed_from_preset(preset, model)
    results = akpz_map(v, 12, delta=0.05, runner=ParallelRunner(workers=2))
    assert results
    assert all(r.label is not AkpzLabel.ISOTROPIC for r in results)


def test_akpz_map_order_does_not_depend_on_workers() -> None:
    v = speed_from_preset("abs-z2", SQUARE)
    serial = akpz_map(v, 10, runner=ParallelRunner(workers=1))
    threaded = akpz_map(v, 10, runner=ParallelRunner(workers=4))
    assert [r.rho for r in serial] == [r.rho for r in threaded]
    assert [r.det for r in serial] == [r.det for r in threaded]


# ---------------------------------------------------------------------------
# Obstruction form
# ---------------------------------------------------------------------------


def test_obstruction_value() -> None:
    sigma_matrix = np.array([[2.0, 0.0], [0.0, 1.0]])
    hess_h = np.array([[1.0, 1.0], [1.0, 0.0]])
    hess_v = np.eye(2)
    # H Sigma H = [[3, 2], [2, 2]].
    assert obstruction(sigma_matrix, hess_h, hess_v) == pytest.approx(5.0)


def test_obstruction_certificate() -> None:
    certificate = obstruction_certificate(np.eye(2), np.eye(2), np.eye(2))
    assert certificate.applies and certificate.holds
    assert certificate.value == pytest.approx(2.0)

    saddle = obstruction_certificate(np.eye(2), np.eye(2), np.diag([1.0, -1.0]))
    assert not saddle.applies
    assert saddle.value == pytest.approx(0.0)


def test_z_composed_speed_uses_the_slope_map() -> None:
    v = speed_from_preset("re-z", SQUARE)
    rho = np.array([[0.3, 0.7], [0.6, 0.4]])
    assert np.allclose(speed_eval(v, rho), np.real(z_from_slope(SQUARE, rho)))
