"""Tests for the Ronkin function, the Legendre transform and the Hessian routes."""

from __future__ import annotations

import numpy as np
import pytest

from akpz_lab.core.dimer_lattice import HONEYCOMB, SQUARE, random_liquid_slopes
from akpz_lab.core.surface_tension import (
    SurfaceTensionMatrix,
    in_amoeba,
    midpoint_convex,
    ronkin,
    ronkin_evaluation,
    ronkin_gradient,
    ronkin_jensen,
    sigma,
    sigma_dual,
    sigma_gradient_dual,
    sigma_hessian,
    sigma_hessian_dual,
)
from akpz_lab.exceptions import OutsidePolygonError, ValidationError
from tests.oracles import RONKIN_ORIGIN, lozenge_hessian, lozenge_sigma

# ---------------------------------------------------------------------------
# Ronkin function
# ---------------------------------------------------------------------------


def test_ronkin_jensen_matches_mahler_measures(model) -> None:
    assert ronkin_jensen(model, (0.0, 0.0)) == pytest.approx(RONKIN_ORIGIN[model.name], abs=1e-10)


def test_trapezoid_agrees_with_jensen(model) -> None:
    assert ronkin(model, (0.0, 0.0)) == pytest.approx(RONKIN_ORIGIN[model.name], abs=1e-3)


@pytest.mark.parametrize("n", [8, 64, 512])
def test_trapezoid_nodes_on_the_negative_real_axis(n: int) -> None:  # noqa: D401
    """On the anti-diagonal of the torus grid 1 + x + y is real and negative; the phase check ignores the sign of pi."""
    value = ronkin(HONEYCOMB, (0.0, 0.0), n=n)
    assert np.isfinite(value)
    if n >= 64:
        assert value == pytest.approx(RONKIN_ORIGIN["honeycomb"], abs=2e-2)


def test_ronkin_is_linear_outside_the_amoeba() -> None:
    # |z| = e^2 dominates P = z + w - 1 on the whole torus.
    assert ronkin(HONEYCOMB, (2.0, 0.0), n=64) == pytest.approx(2.0, abs=1e-12)
    assert ronkin_jensen(HONEYCOMB, (2.0, 0.0)) == pytest.approx(2.0, abs=1e-10)
    assert np.allclose(ronkin_gradient(HONEYCOMB, (2.0, 0.0)), [1.0, 0.0], atol=1e-6)


def test_ronkin_rejects_odd_order() -> None:
    with pytest.raises(ValidationError):
        ronkin(HONEYCOMB, (0.0, 0.0), n=33)


def test_ronkin_evaluation_records_method() -> None:
    evaluation = ronkin_evaluation(SQUARE, (0.1, -0.2), method="jensen")
    assert evaluation.method == "jensen"
    assert evaluation.B == (0.1, -0.2)
    with pytest.raises(ValidationError):
        ronkin_evaluation(SQUARE, (0.0, 0.0), method="simpson")


def test_in_amoeba() -> None:
    assert in_amoeba(HONEYCOMB, (0.0, 0.0))
    assert not in_amoeba(HONEYCOMB, (2.0, 0.0))
    assert in_amoeba(SQUARE, (0.0, 0.0))


def test_midpoint_convexity(model) -> None:
    assert midpoint_convex(model, (0.0, 0.0), (0.8, -0.6))
    assert midpoint_convex(model, (-0.5, 0.2), (0.3, 0.6))


# ---------------------------------------------------------------------------
# Legendre transform
# ---------------------------------------------------------------------------


def test_sigma_at_honeycomb_centre() -> None:
    result = sigma(HONEYCOMB, (1 / 3, 1 / 3))
    assert result.liquid
    assert result.value == pytest.approx(-0.3230659472194505, abs=1e-8)
    assert np.allclose(result.b_star, 0.0, atol=1e-7)


def test_sigma_at_square_centre() -> None:
    result = sigma(SQUARE, (0.5, 0.5))
    assert result.value == pytest.approx(-RONKIN_ORIGIN["square"], abs=1e-8)


def test_sigma_outside_liquid_region() -> None:
    result = sigma(HONEYCOMB, (0.6, 0.6))
    assert not result.liquid
    assert result.value is None
    assert result.b_star is None


def test_legendre_and_dual_routes_agree() -> None:
    rho = (0.25, 0.4)
    result = sigma(HONEYCOMB, rho)
    assert result.value == pytest.approx(sigma_dual(HONEYCOMB, rho), abs=1e-8)
    assert np.allclose(result.b_star, sigma_gradient_dual(HONEYCOMB, rho), atol=1e-7)
    assert result.value == pytest.approx(lozenge_sigma(*rho), abs=1e-8)


def test_sigma_dual_matches_lozenge_formula() -> None:
    rho = random_liquid_slopes(HONEYCOMB, 5, delta=0.05, seed=2)
    values = sigma_dual(HONEYCOMB, rho)
    expected = [lozenge_sigma(r1, r2) for r1, r2 in rho]
    assert np.allclose(values, expected, atol=1e-9)


# ---------------------------------------------------------------------------
# Hessian
# ---------------------------------------------------------------------------


def test_dual_hessian_matches_lozenge_formula() -> None:
    rho = random_liquid_slopes(HONEYCOMB, 20, seed=4)
    dual = sigma_hessian_dual(HONEYCOMB, rho)
    expected = np.stack([lozenge_hessian(r1, r2) for r1, r2 in rho])
    assert np.allclose(dual, expected, rtol=1e-8, atol=1e-8)


def test_legendre_hessian_matches_lozenge_formula() -> None:
    matrix = sigma_hessian(HONEYCOMB, (0.3, 0.25))
    assert np.allclose(matrix.matrix, lozenge_hessian(0.3, 0.25), rtol=1e-3)
    assert matrix.positive_definite


def test_dual_hessian_is_positive_definite(model) -> None:
    rho = random_liquid_slopes(model, 50, seed=9)
    matrix = sigma_hessian(model, rho, method="dual")
    assert matrix.positive_definite
    assert np.allclose(matrix.s12, matrix.matrix[..., 1, 0])


def test_sigma_hessian_argument_checks() -> None:
    with pytest.raises(OutsidePolygonError):
        sigma_hessian(HONEYCOMB, (0.7, 0.7))
    with pytest.raises(ValidationError):
        sigma_hessian(HONEYCOMB, (0.3, 0.3), method="spline")
    with pytest.raises(ValidationError):
        sigma_hessian(HONEYCOMB, (0.3, 0.3), step=0.0)
    with pytest.raises(ValidationError):
        sigma_hessian(HONEYCOMB, [[0.3, 0.3], [0.2, 0.2]])


def test_surface_tension_matrix_properties() -> None:
    matrix = SurfaceTensionMatrix.from_matrix([[2.0, 0.5], [0.5, 1.0]])
    assert matrix.s11 == 2.0
    assert matrix.s12 == 0.5
    assert matrix.s22 == 1.0
    assert matrix.positive_definite
    assert not SurfaceTensionMatrix.from_matrix([[1.0, 2.0], [2.0, 1.0]]).positive_definite
