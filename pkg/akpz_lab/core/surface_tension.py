"""Dimer surface tension as the Legendre transform of the Ronkin function.

The Ronkin function of a model is the torus average of ``log|P|`` over
``|z| = exp(s B1)``, ``|w| = exp(s B2)`` where ``s`` is the model orientation
(``-1`` when the exponents of ``P`` span the negative of the Newton polygon).
With that convention ``grad R(B*) = rho`` at the maximiser of ``rho.B - R(B)``
and ``B* = s * (log|z|, log|w|)`` at ``z = z_from_slope(rho)``.

Two evaluators are provided:

* :func:`ronkin` - n x n trapezoid rule on the torus with local refinement
  near zeros of ``P``.
* :func:`ronkin_jensen` - the ``w`` contour is integrated exactly (Jensen's
  formula, ``P`` being of degree one in ``w``) and the ``z`` contour with
  composite Gauss-Legendre panels split at the points where the torus meets
  the spectral curve. Accurate to rounding, which finite-difference Hessians
  of ``sigma`` require.

No memoisation cache is kept, so every function is safe to call from
concurrent workers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq

from akpz_lab.core.dimer_lattice import (
    DimerModel,
    SlopeLike,
    as_points,
    is_liquid,
    log_modulus_map,
    slope_jacobian,
    solve_w,
    z_from_slope,
)
from akpz_lab.exceptions import (
    ConvergenceError,
    OutsidePolygonError,
    QuadratureError,
    ValidationError,
)
from akpz_lab.utils.finite_diff import hessian_richardson, taylor_stencil

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 512
ZERO_TOLERANCE = 1e-10
MAX_REFINEMENT = 3
IMAGINARY_TOLERANCE = 1e-8
CUT_TOLERANCE = 1e-12

GL_PANELS = 16
GL_ORDER = 24
KINK_SAMPLES = 512

RONKIN_STEP = 1e-3
LEGENDRE_TOLERANCE = 1e-10
LEGENDRE_MAX_ITER = 100
DEFAULT_HESSIAN_STEP = 1e-3

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class RonkinEvaluation:
    """One Ronkin value with the quadrature that produced it."""

    B: tuple[float, float]
    value: float
    quadrature_order: int
    method: str = "trapezoid"


@dataclass(frozen=True)
class SurfaceTensionMatrix:
    """Second derivatives of ``sigma``; arrays may carry leading batch axes."""

    matrix: NDArray[np.float64]
    eigenvalues: NDArray[np.float64]
    asymmetry: Any = 0.0

    @classmethod
    def from_matrix(cls, matrix: ArrayLike, asymmetry: Any = 0.0) -> "SurfaceTensionMatrix":
        """Wrap a symmetric matrix (or stack of matrices)."""
        matrix = np.asarray(matrix, dtype=float)
        return cls(matrix=matrix, eigenvalues=np.linalg.eigvalsh(matrix), asymmetry=asymmetry)

    @property
    def s11(self) -> Any:
        return self.matrix[..., 0, 0]

    @property
    def s12(self) -> Any:
        return self.matrix[..., 0, 1]

    @property
    def s22(self) -> Any:
        return self.matrix[..., 1, 1]

    @property
    def positive_definite(self) -> bool:
        """Whether every eigenvalue is strictly positive."""
        return bool(np.all(self.eigenvalues > 0))


@dataclass(frozen=True)
class SigmaResult:
    """Outcome of the Legendre maximisation at one slope.

    ``value`` and ``b_star`` are ``None`` for slopes outside the liquid
    region; check :attr:`liquid` before using them.
    """

    rho: tuple[float, float]
    value: float | None
    b_star: tuple[float, float] | None
    iterations: int = 0

    @property
    def liquid(self) -> bool:
        return self.value is not None

    @classmethod
    def outside(cls, rho: tuple[float, float]) -> "SigmaResult":
        """Marker for a slope outside the margin-delta liquid region."""
        return cls(rho=rho, value=None, b_star=None)


def _as_pair(values: ArrayLike) -> tuple[float, float]:
    pair = np.asarray(values, dtype=float).reshape(-1)
    if pair.shape != (2,):
        raise ValidationError(f"expected a pair of reals, got {values!r}")
    return float(pair[0]), float(pair[1])


# ---------------------------------------------------------------------------
# Trapezoid evaluator
# ---------------------------------------------------------------------------


def _torus_p(
    model: DimerModel, log_r: float, log_rw: float, theta: NDArray, phi: NDArray
) -> NDArray:
    z = np.exp(log_r + 1j * theta)
    w = np.exp(log_rw + 1j * phi)
    value = np.zeros(np.broadcast(z, w).shape, dtype=complex)
    for (i, j), coefficient in model.coefficients:
        value = value + coefficient * z**i * w**j
    return value


def _refined_log_abs(
    model: DimerModel,
    log_r: float,
    log_rw: float,
    theta: float,
    phi: float,
    width: float,
    level: int,
) -> float:
    """Average ``log|P|`` over a cell of the given width by 2 x 2 subdivision."""
    offsets = np.array([-0.25, 0.25]) * width
    sub_theta, sub_phi = np.meshgrid(theta + offsets, phi + offsets, indexing="ij")
    values = _torus_p(model, log_r, log_rw, sub_theta, sub_phi).ravel()
    logger.debug("ronkin refinement level %d at (%.6f, %.6f)", level, theta, phi)
    total = 0.0
    for value, t, p in zip(values, sub_theta.ravel(), sub_phi.ravel()):
        if abs(value) >= ZERO_TOLERANCE:
            total += np.log(abs(value))
        elif level < MAX_REFINEMENT:
            total += _refined_log_abs(model, log_r, log_rw, t, p, width / 2.0, level + 1)
        else:
            raise QuadratureError(
                f"ronkin quadrature hit a zero of P after {MAX_REFINEMENT} refinement levels",
                theta=t,
                phi=p,
            )
    return total / values.size


def ronkin(model: DimerModel, B: ArrayLike, n: int = DEFAULT_ORDER) -> float:
    """Trapezoid rule for the Ronkin function with ``n x n`` half-offset nodes.

    Raises:
        QuadratureError: If ``P`` vanishes on the torus beyond the refinement
            depth or the imaginary part of ``log P`` does not average out.
    """
    if n < 4 or n % 2:
        raise ValidationError(f"quadrature order must be an even integer >= 4, got {n}")
    b1, b2 = _as_pair(B)
    s = model.orientation
    log_r, log_rw = s * b1, s * b2
    width = TWO_PI / n
    angles = width * (np.arange(n) + 0.5)
    theta, phi = np.meshgrid(angles, angles, indexing="ij")
    values = _torus_p(model, log_r, log_rw, theta, phi)

    modulus = np.abs(values)
    near_zero = modulus < ZERO_TOLERANCE
    log_abs = np.log(np.where(near_zero, 1.0, modulus))
    for i, j in np.argwhere(near_zero):
        log_abs[i, j] = _refined_log_abs(
            model, log_r, log_rw, theta[i, j], phi[i, j], width, level=1
        )

    # Node (k, l) is conjugate to (n-1-k, n-1-l); arg P is averaged over each
    # pair, with values on the negative real axis counted as 0 instead of +-pi.
    phase = np.angle(values)
    phase[(values.real < 0) & (np.abs(values.imag) <= CUT_TOLERANCE * modulus)] = 0.0
    paired = 0.5 * (phase + phase[::-1, ::-1])
    counted = ~(near_zero | near_zero[::-1, ::-1])
    imaginary = abs(float(np.mean(paired[counted]))) if np.any(counted) else 0.0
    if imaginary > IMAGINARY_TOLERANCE:
        raise QuadratureError(
            "imaginary part of log P does not average out on the torus",
            residual=imaginary,
            B=(b1, b2),
        )
    return float(np.mean(log_abs))


# ---------------------------------------------------------------------------
# Jensen / Gauss-Legendre evaluator
# ---------------------------------------------------------------------------


def _kink_function(model: DimerModel, log_r: float, log_rw: float, theta: Any) -> Any:
    """``log|w(z)| - log|w|_torus`` on the circle ``|z| = exp(log_r)``."""
    a0, a1 = model.linear_coefficients(np.exp(log_r + 1j * np.asarray(theta)))
    with np.errstate(divide="ignore"):
        return np.log(np.abs(a0)) - np.log(np.abs(a1)) - log_rw


def _torus_kinks(model: DimerModel, log_r: float, log_rw: float) -> NDArray[np.float64]:
    """Angles where the torus meets the spectral curve, sorted in ``[0, 2 pi)``."""
    grid = TWO_PI * (np.arange(KINK_SAMPLES) + 0.5) / KINK_SAMPLES
    values = _kink_function(model, log_r, log_rw, grid)
    upper = np.append(grid[1:], grid[0] + TWO_PI)
    upper_values = np.roll(values, -1)
    crossings = (
        np.isfinite(values) & np.isfinite(upper_values) & (np.sign(values) * np.sign(upper_values) < 0)
    )
    kinks = [
        brentq(
            lambda t: float(_kink_function(model, log_r, log_rw, t)),
            a,
            b,
            xtol=1e-15,
        )
        for a, b in zip(grid[crossings], upper[crossings])
    ]
    return np.sort(np.mod(np.asarray(kinks, dtype=float), TWO_PI))


def _outer_average(
    model: DimerModel,
    log_r: ArrayLike,
    log_rw: ArrayLike,
    breaks: ArrayLike,
    panels: int = GL_PANELS,
    order: int = GL_ORDER,
) -> NDArray[np.float64]:
    """Average of the Jensen-reduced integrand over ``theta``.

    ``breaks`` has shape ``(..., m)``, sorted within one period; the pieces
    between consecutive breaks (wrapping around) are integrated with
    ``panels`` Gauss-Legendre panels of ``order`` nodes each.
    """
    log_r = np.asarray(log_r, dtype=float)
    log_rw = np.asarray(log_rw, dtype=float)
    breaks = np.asarray(breaks, dtype=float)
    ends = np.concatenate([breaks[..., 1:], breaks[..., :1] + TWO_PI], axis=-1)
    length = ends - breaks

    nodes, weights = np.polynomial.legendre.leggauss(order)
    fraction = (np.arange(panels)[:, None] + 0.5 * (nodes[None, :] + 1.0)) / panels
    theta = breaks[..., None, None] + length[..., None, None] * fraction
    quad_weights = length[..., None, None] * (0.5 / panels) * weights

    lw = log_rw[..., None, None, None]
    a0, a1 = model.linear_coefficients(np.exp(log_r[..., None, None, None] + 1j * theta))
    with np.errstate(divide="ignore"):
        inner = model.w_degree_min * lw + np.maximum(
            np.log(np.abs(a0)), np.log(np.abs(a1)) + lw
        )
    return np.sum(quad_weights * inner, axis=(-3, -2, -1)) / TWO_PI


def ronkin_jensen(
    model: DimerModel, B: ArrayLike, panels: int = GL_PANELS, order: int = GL_ORDER
) -> float:
    """Ronkin function with the inner contour done exactly by Jensen's formula."""
    b1, b2 = _as_pair(B)
    s = model.orientation
    log_r, log_rw = s * b1, s * b2
    kinks = _torus_kinks(model, log_r, log_rw)
    breaks = kinks if kinks.size else np.zeros(1)
    return float(_outer_average(model, log_r, log_rw, breaks, panels, order))


def ronkin_evaluation(
    model: DimerModel, B: ArrayLike, n: int = DEFAULT_ORDER, method: str = "trapezoid"
) -> RonkinEvaluation:
    """Evaluate the Ronkin function and record how."""
    if method == "trapezoid":
        value = ronkin(model, B, n)
    elif method == "jensen":
        value = ronkin_jensen(model, B)
        n = GL_PANELS * GL_ORDER
    else:
        raise ValidationError(f"unknown Ronkin method {method!r}")
    return RonkinEvaluation(B=_as_pair(B), value=value, quadrature_order=n, method=method)


def midpoint_convex(
    model: DimerModel,
    b_a: ArrayLike,
    b_b: ArrayLike,
    n: int = DEFAULT_ORDER,
    tolerance: float = 1e-8,
) -> bool:
    """Check ``R((Ba + Bb)/2) <= (R(Ba) + R(Bb))/2`` within tolerance."""
    b_a = np.asarray(b_a, dtype=float)
    b_b = np.asarray(b_b, dtype=float)
    middle = ronkin(model, 0.5 * (b_a + b_b), n)
    return middle <= 0.5 * (ronkin(model, b_a, n) + ronkin(model, b_b, n)) + tolerance


def in_amoeba(model: DimerModel, B: ArrayLike) -> bool:
    """Whether the torus ``|z| = exp(s B1)``, ``|w| = exp(s B2)`` meets ``P = 0``."""
    b1, b2 = _as_pair(B)
    s = model.orientation
    grid = TWO_PI * (np.arange(4 * KINK_SAMPLES) + 0.5) / (4 * KINK_SAMPLES)
    values = _kink_function(model, s * b1, s * b2, grid)
    finite = values[np.isfinite(values)]
    return bool(finite.size and finite.min() <= 0.0 <= finite.max())


def _ronkin_batch(model: DimerModel):
    def evaluate(points: NDArray) -> NDArray:
        flat = np.asarray(points, dtype=float).reshape(-1, 2)
        values = np.array([ronkin_jensen(model, point) for point in flat])
        return values.reshape(np.shape(points)[:-1])

    return evaluate


def ronkin_gradient(
    model: DimerModel, B: ArrayLike, step: float = RONKIN_STEP
) -> NDArray[np.float64]:
    """Fourth-order finite-difference gradient of :func:`ronkin_jensen`."""
    _, gradient, _ = taylor_stencil(_ronkin_batch(model), _as_pair(B), step)
    return gradient


# ---------------------------------------------------------------------------
# Legendre transform
# ---------------------------------------------------------------------------


def _legendre_maximise(
    model: DimerModel, rho: NDArray, initial_b: ArrayLike
) -> tuple[NDArray[np.float64], float, int]:
    """Damped Newton ascent of ``rho.B - R(B)``; returns ``(B*, sigma, iterations)``."""
    evaluate = _ronkin_batch(model)
    b = np.asarray(initial_b, dtype=float).copy()
    for iteration in range(LEGENDRE_MAX_ITER):
        r_b, gradient, hessian = taylor_stencil(evaluate, b, RONKIN_STEP)
        residual = rho - gradient
        error = float(np.max(np.abs(residual)))
        logger.debug("legendre iteration %d: |rho - grad R| = %.3e", iteration, error)
        if error < LEGENDRE_TOLERANCE:
            return b, float(rho @ b - r_b), iteration

        try:
            direction = np.linalg.solve(hessian, residual)
            if direction @ residual <= 0:
                raise np.linalg.LinAlgError("Hessian not positive definite")
        except np.linalg.LinAlgError:
            direction = residual

        current = float(rho @ b - r_b)
        slack = 1e-14 * (1.0 + abs(current))
        scale = 1.0
        for _ in range(40):
            trial = b + scale * direction
            if rho @ trial - ronkin_jensen(model, trial) >= current - slack:
                break
            scale *= 0.5
        else:
            raise ConvergenceError(
                "legendre line search starved", rho=rho, B=b, residual=error
            )
        b = trial

    raise ConvergenceError(
        f"legendre maximisation did not converge in {LEGENDRE_MAX_ITER} iterations",
        rho=rho,
        residual=error,
    )


def sigma(
    model: DimerModel,
    rho: SlopeLike,
    delta: float | None = None,
    initial_b: ArrayLike | None = None,
) -> SigmaResult:
    """Surface tension ``sigma(rho) = sup_B [rho.B - R(B)]`` by Newton over ``B``.

    Slopes outside the margin-``delta`` liquid region give
    :meth:`SigmaResult.outside`.
    """
    delta = model.polygon.margin if delta is None else delta
    point = as_points(rho).reshape(-1)
    pair = (float(point[0]), float(point[1]))
    if not is_liquid(model, point, delta):
        return SigmaResult.outside(pair)
    start = np.zeros(2) if initial_b is None else np.asarray(initial_b, dtype=float)
    b_star, value, iterations = _legendre_maximise(model, point, start)
    logger.debug("sigma%s = %.15f after %d iterations", pair, value, iterations)
    return SigmaResult(
        rho=pair, value=value, b_star=(float(b_star[0]), float(b_star[1])), iterations=iterations
    )


def sigma_hessian(
    model: DimerModel,
    rho: SlopeLike,
    step: float = DEFAULT_HESSIAN_STEP,
    method: str = "legendre",
    delta: float | None = None,
) -> SurfaceTensionMatrix:
    """Second derivatives of ``sigma`` at a liquid slope.

    ``method="legendre"`` differentiates :func:`sigma` by central differences
    with Richardson extrapolation over ``step`` and ``step/2``; every stencil
    point is warm-started from the centre's ``B*``. ``method="dual"`` uses
    the holomorphic map (see :func:`sigma_hessian_dual`) and is vectorised.

    Raises:
        OutsidePolygonError: If ``rho`` is not liquid with margin ``delta``.
    """
    if step <= 0:
        raise ValidationError(f"finite-difference step must be positive, got {step}")
    delta = model.polygon.margin if delta is None else delta
    points = as_points(rho)
    if not np.all(is_liquid(model, points, delta)):
        raise OutsidePolygonError(f"slope is not {model.name} liquid with margin {delta}")

    if method == "dual":
        return SurfaceTensionMatrix.from_matrix(sigma_hessian_dual(model, points))
    if method != "legendre":
        raise ValidationError(f"unknown sigma_hessian method {method!r}")
    if delta <= 2 * step:
        raise ValidationError(f"margin {delta} must exceed twice the step {step}")
    if points.ndim != 1:
        raise ValidationError("the legendre route takes one slope at a time")

    warm = np.asarray(sigma(model, points, delta).b_star)

    def sigma_at(stencil: NDArray) -> NDArray:
        flat = np.asarray(stencil, dtype=float).reshape(-1, 2)
        values = [_legendre_maximise(model, p, warm)[1] for p in flat]
        return np.asarray(values).reshape(np.shape(stencil)[:-1])

    estimate = hessian_richardson(sigma_at, points, step)
    return SurfaceTensionMatrix.from_matrix(estimate.matrix, float(estimate.asymmetry))


# ---------------------------------------------------------------------------
# Dual (holomorphic) route, vectorised over slopes
# ---------------------------------------------------------------------------


def sigma_gradient_dual(model: DimerModel, rho: SlopeLike) -> NDArray[np.float64]:
    """``grad sigma = B* = s * (log|z|, log|w|)``; shape ``(..., 2)``."""
    return model.orientation * log_modulus_map(model, rho)


def sigma_hessian_dual(model: DimerModel, rho: SlopeLike) -> NDArray[np.float64]:
    """``Sigma = s * d(log|z|, log|w|)/d rho``; shape ``(..., 2, 2)``."""
    z = z_from_slope(model, rho)
    return model.orientation * slope_jacobian(model, z).log_modulus_by_slope()


def sigma_dual(model: DimerModel, rho: SlopeLike) -> Any:
    """``sigma = rho.B* - R(B*)`` with the torus meeting the curve at ``z*`` and its conjugate."""
    points = as_points(rho)
    z = np.asarray(z_from_slope(model, points))
    w = np.asarray(solve_w(model, z))
    b_star = model.orientation * np.stack([np.log(np.abs(z)), np.log(np.abs(w))], axis=-1)
    angle = np.angle(z)
    breaks = np.stack([-angle, angle], axis=-1)
    ronkin_value = _outer_average(model, np.log(np.abs(z)), np.log(np.abs(w)), breaks)
    value = np.sum(points * b_star, axis=-1) - ronkin_value
    return value.item() if np.ndim(value) == 0 else value


__all__ = [
    "DEFAULT_HESSIAN_STEP",
    "DEFAULT_ORDER",
    "RonkinEvaluation",
    "SigmaResult",
    "SurfaceTensionMatrix",
    "in_amoeba",
    "midpoint_convex",
    "ronkin",
    "ronkin_evaluation",
    "ronkin_gradient",
    "ronkin_jensen",
    "sigma",
    "sigma_dual",
    "sigma_gradient_dual",
    "sigma_hessian",
    "sigma_hessian_dual",
]
