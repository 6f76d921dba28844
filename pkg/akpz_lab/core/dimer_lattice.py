"""Dimer models: characteristic polynomials, Newton polygons and the z <-> slope map.

Both shipped models are genus zero and their polynomial is of degree one in
``w`` (up to a monomial factor), so ``P(z, w) = 0`` has a single solution
``w(z)``. Principal branches are used throughout: ``arg z`` in ``(0, pi)`` and
``arg w`` in ``(-pi, 0)`` for ``z`` in the upper half plane, and the slope is
``rho = (1/pi) * (-arg w, arg z)``.

All operations accept scalars or numpy arrays and are vectorised; scalar
inputs give Python scalars back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linprog

from akpz_lab.exceptions import (
    BranchError,
    ConfigError,
    ConvergenceError,
    DomainError,
    OutsidePolygonError,
    SingularPointError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.02
SINGULAR_TOLERANCE = 1e-10
NEWTON_TOLERANCE = 1e-12
NEWTON_MAX_ITER = 100
NEWTON_MAX_STEP = 1.0
MAX_REJECTION_BATCHES = 1000


def _unwrap(value: Any) -> Any:
    """Return a Python scalar for 0-d arrays, the array otherwise."""
    array = np.asarray(value)
    return array.item() if array.ndim == 0 else array


class Slope(NamedTuple):
    """A slope ``(rho1, rho2)``; the fields may be floats or equally shaped arrays."""

    rho1: Any
    rho2: Any

    def as_array(self) -> NDArray[np.float64]:
        """Stack into an array of shape ``(..., 2)``."""
        return np.stack(
            [np.asarray(self.rho1, dtype=float), np.asarray(self.rho2, dtype=float)], axis=-1
        )

    @classmethod
    def from_array(cls, points: ArrayLike) -> "Slope":
        """Build a slope from an array of shape ``(..., 2)``."""
        points = np.asarray(points, dtype=float)
        return cls(_unwrap(points[..., 0]), _unwrap(points[..., 1]))


SlopeLike = Slope | tuple[float, float] | ArrayLike


def as_points(rho: SlopeLike) -> NDArray[np.float64]:
    """Return *rho* as a float array of shape ``(..., 2)``."""
    if isinstance(rho, Slope):
        return rho.as_array()
    points = np.asarray(rho, dtype=float)
    if points.shape[-1:] != (2,):
        raise ValidationError(f"slopes need a trailing axis of length 2, got shape {points.shape}")
    return points


@dataclass(frozen=True)
class NewtonPolygon:
    """Convex lattice polygon of allowed slopes.

    Attributes:
        vertices: Integer vertices in counterclockwise order.
        margin: Default interior margin defining "safely liquid" slopes.
    """

    vertices: tuple[tuple[int, int], ...]
    margin: float = DEFAULT_MARGIN

    def __post_init__(self) -> None:
        """Validate integrality, convexity and orientation."""
        if len(self.vertices) < 3:
            raise ValidationError("a Newton polygon needs at least three vertices")
        for vertex in self.vertices:
            if len(vertex) != 2 or any(float(c) != int(c) for c in vertex):
                raise ValidationError(f"polygon vertex {vertex} is not an integer point")
        if self.margin <= 0:
            raise ValidationError(f"polygon margin must be positive, got {self.margin}")
        corners = np.asarray(self.vertices, dtype=float)
        edges = np.roll(corners, -1, axis=0) - corners
        turns = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(
            edges, -1, axis=0
        )[:, 0]
        if np.any(turns <= 0):
            raise ValidationError("polygon vertices must be convex and counterclockwise")

    def edge_distances(self, rho: SlopeLike) -> NDArray[np.float64]:
        """Signed distances to every edge line, positive inside; shape ``(..., n_edges)``."""
        points = as_points(rho)
        corners = np.asarray(self.vertices, dtype=float)
        edges = np.roll(corners, -1, axis=0) - corners
        normals = np.stack([-edges[:, 1], edges[:, 0]], axis=-1)
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
        offsets = points[..., None, :] - corners
        return np.sum(offsets * normals, axis=-1)

    def contains(self, rho: SlopeLike, margin: float = 0.0) -> NDArray[np.bool_]:
        """Membership at distance ``>= margin`` (strict interior when ``margin == 0``)."""
        distances = np.min(self.edge_distances(rho), axis=-1)
        return distances >= margin if margin > 0 else distances > 0

    def inradius(self) -> float:
        """Largest distance from a point of the polygon to its boundary (Chebyshev centre LP)."""
        corners = np.asarray(self.vertices, dtype=float)
        edges = np.roll(corners, -1, axis=0) - corners
        normals = np.stack([-edges[:, 1], edges[:, 0]], axis=-1)
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
        # maximise t subject to normal . (x - corner) >= t on every edge
        a_ub = np.hstack([-normals, np.ones((len(normals), 1))])
        b_ub = -np.sum(normals * corners, axis=-1)
        result = linprog([0.0, 0.0, -1.0], A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * 3)
        return float(result.x[2])

    def bounding_box(self) -> tuple[int, int, int, int]:
        """Return ``(min1, min2, max1, max2)``."""
        corners = np.asarray(self.vertices, dtype=int)
        return (
            int(corners[:, 0].min()),
            int(corners[:, 1].min()),
            int(corners[:, 0].max()),
            int(corners[:, 1].max()),
        )


def _exponent_orientation(name: str, terms: tuple[tuple[tuple[int, int], float], ...]) -> int:
    exponents = np.asarray([exponent for exponent, _ in terms])
    if np.all(exponents >= 0):
        return 1
    if np.all(exponents <= 0):
        return -1
    raise ValidationError(f"model {name!r}: exponents must lie in one closed quadrant")


@dataclass(frozen=True)
class DimerModel:
    """A named dimer model with its Laurent characteristic polynomial.

    Attributes:
        name: Registry key.
        polygon: Newton polygon of slopes.
        coefficients: ``((i, j), c)`` pairs of the Laurent polynomial
            ``P(z, w) = sum c * z**i * w**j``. A mapping is accepted and
            normalised.
        branch_offset: Integer sheet index added to ``arg w`` (in units of
            ``2 pi``). Zero selects the principal branch.
    """

    name: str
    polygon: NewtonPolygon
    coefficients: tuple[tuple[tuple[int, int], float], ...] = field(default=())
    branch_offset: int = 0

    def __post_init__(self) -> None:
        """Normalise coefficients and check the polynomial is linear in ``w``."""
        items = (
            self.coefficients.items()
            if isinstance(self.coefficients, Mapping)
            else self.coefficients
        )
        terms = tuple(
            sorted(((int(i), int(j)), float(c)) for (i, j), c in items if float(c) != 0.0)
        )
        if not terms:
            raise ValidationError(f"model {self.name!r} has an empty polynomial")
        object.__setattr__(self, "coefficients", terms)
        degrees = {j for (_, j), _ in terms}
        if max(degrees) - min(degrees) != 1:
            raise ValidationError(
                f"model {self.name!r}: only polynomials of degree one in w are supported"
            )
        _exponent_orientation(self.name, terms)

    @property
    def terms(self) -> dict[tuple[int, int], float]:
        """Exponent pair to coefficient mapping."""
        return dict(self.coefficients)

    @property
    def orientation(self) -> int:
        """+1 when the exponents of ``P`` span the polygon, -1 when they span its negative."""
        return _exponent_orientation(self.name, self.coefficients)

    @property
    def w_degree_min(self) -> int:
        """Lowest power of ``w`` in ``P``."""
        return min(j for (_, j), _ in self.coefficients)

    def linear_coefficients(self, z: ArrayLike) -> tuple[NDArray, NDArray]:
        """Return ``(a0(z), a1(z))`` with ``P = w**jmin * (a0 + a1 * w)``."""
        z = np.asarray(z, dtype=complex)
        jmin = self.w_degree_min
        a0 = np.zeros_like(z)
        a1 = np.zeros_like(z)
        for (i, j), coefficient in self.coefficients:
            term = coefficient * z**i
            if j == jmin:
                a0 = a0 + term
            else:
                a1 = a1 + term
        return a0, a1


HONEYCOMB = DimerModel(
    name="honeycomb",
    polygon=NewtonPolygon(vertices=((0, 0), (1, 0), (0, 1))),
    coefficients={(1, 0): 1.0, (0, 1): 1.0, (0, 0): -1.0},
)

SQUARE = DimerModel(
    name="square",
    polygon=NewtonPolygon(vertices=((0, 0), (1, 0), (1, 1), (0, 1))),
    coefficients={(0, 0): -1.0, (-1, 0): 1.0, (0, -1): 1.0, (-1, -1): 1.0},
)

MODELS: dict[str, DimerModel] = {model.name: model for model in (HONEYCOMB, SQUARE)}


def get_model(name: str) -> DimerModel:
    """Look up a model by registry key.

    Raises:
        ConfigError: If the key is unknown.
    """
    try:
        return MODELS[name]
    except KeyError:
        raise ConfigError(
            f"unknown model {name!r} (choose from {', '.join(sorted(MODELS))})",
            key="model",
            value=name,
        ) from None


# ---------------------------------------------------------------------------
# Polynomial and spectral curve
# ---------------------------------------------------------------------------


def _check_nonzero(z: NDArray, w: NDArray) -> None:
    if np.any(z == 0) or np.any(w == 0):
        raise DomainError("Laurent polynomial evaluated at z = 0 or w = 0")


def eval_P(model: DimerModel, z: ArrayLike, w: ArrayLike) -> Any:
    """Evaluate the characteristic polynomial ``P(z, w)``.

    Raises:
        DomainError: If ``z`` or ``w`` is zero.
    """
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    _check_nonzero(z, w)
    value = np.zeros(np.broadcast(z, w).shape, dtype=complex)
    for (i, j), coefficient in model.coefficients:
        value = value + coefficient * z**i * w**j
    return _unwrap(value)


def eval_P_derivatives(model: DimerModel, z: ArrayLike, w: ArrayLike) -> tuple[Any, Any]:
    """Return ``(P_z, P_w)`` at ``(z, w)``."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    _check_nonzero(z, w)
    shape = np.broadcast(z, w).shape
    p_z = np.zeros(shape, dtype=complex)
    p_w = np.zeros(shape, dtype=complex)
    for (i, j), coefficient in model.coefficients:
        if i:
            p_z = p_z + coefficient * i * z ** (i - 1) * w**j
        if j:
            p_w = p_w + coefficient * j * z**i * w ** (j - 1)
    return _unwrap(p_z), _unwrap(p_w)


def solve_w(model: DimerModel, z: ArrayLike) -> Any:
    """Return the unique ``w`` with ``P(z, w) = 0``.

    Raises:
        DomainError: If ``z`` is zero.
        SingularPointError: If ``z`` is within tolerance of a pole or zero of ``w(z)``.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise DomainError("solve_w called at z = 0")
    a0, a1 = model.linear_coefficients(z)
    singular = np.abs(a1) < SINGULAR_TOLERANCE * np.maximum(1.0, np.abs(a0))
    if np.any(singular):
        raise SingularPointError(
            f"{model.name}: z is too close to a pole of w(z)", z=z[singular].ravel()[0]
        )
    w = -a0 / a1
    degenerate = np.abs(w) < SINGULAR_TOLERANCE
    if np.any(degenerate):
        raise SingularPointError(
            f"{model.name}: z is too close to a zero of w(z)", z=z[degenerate].ravel()[0]
        )
    return _unwrap(w)


def curve_derivative(model: DimerModel, z: ArrayLike, w: ArrayLike | None = None) -> Any:
    """Return ``dw/dz = -P_z / P_w`` along the spectral curve."""
    if w is None:
        w = solve_w(model, z)
    p_z, p_w = eval_P_derivatives(model, z, w)
    return _unwrap(-np.asarray(p_z) / np.asarray(p_w))


# ---------------------------------------------------------------------------
# z <-> slope
# ---------------------------------------------------------------------------


def _slope_points(model: DimerModel, z: NDArray) -> NDArray[np.float64]:
    w = np.asarray(solve_w(model, z))
    rho1 = -(np.angle(w) + 2.0 * np.pi * model.branch_offset) / np.pi
    rho2 = np.angle(z) / np.pi
    return np.stack([rho1, rho2], axis=-1)


def slope_from_z(model: DimerModel, z: ArrayLike) -> Slope:
    """Return ``rho = (1/pi) * (-arg w(z), arg z)``.

    Raises:
        BranchError: If ``Im z <= 0``.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        bad = z[z.imag <= 0].ravel()[0] if z.ndim else z.item()
        raise BranchError("slope_from_z needs z in the open upper half plane", z=bad)
    return Slope.from_array(_slope_points(model, z))


def _honeycomb_inverse(points: NDArray) -> NDArray:
    rho1, rho2 = points[..., 0], points[..., 1]
    modulus = np.sin(np.pi * rho1) / np.sin(np.pi * (rho1 + rho2))
    return modulus * np.exp(1j * np.pi * rho2)


def _square_inverse(points: NDArray) -> NDArray:
    # The ray arg z = theta meets the circle through -1, 1 on which [-1, 1]
    # subtends the angle alpha = pi * rho1.
    alpha, theta = np.pi * points[..., 0], np.pi * points[..., 1]
    shift = np.sin(theta) / np.tan(alpha)
    modulus = shift + np.sqrt(shift**2 + 1.0)
    return modulus * np.exp(1j * theta)


_CLOSED_FORM_INVERSES: dict[str, Callable[[NDArray], NDArray]] = {
    "honeycomb": _honeycomb_inverse,
    "square": _square_inverse,
}


def _newton_inverse(model: DimerModel, target: NDArray) -> NDArray:
    """Safeguarded Newton iteration on ``log|z|`` along the ray ``arg z = pi rho2``.

    ``rho2`` fixes ``arg z`` exactly, leaving ``rho1`` a monotone function of
    ``log|z|``. Steps are capped at one unit and fall back to bisection when
    they leave the bracket built from earlier residual signs.
    """
    rho1 = target[..., 0]
    theta = np.pi * target[..., 1]
    log_r = np.zeros_like(rho1)
    lower = np.full_like(rho1, -np.inf)
    upper = np.full_like(rho1, np.inf)

    for iteration in range(NEWTON_MAX_ITER):
        z = np.exp(log_r + 1j * theta)
        residual = _slope_points(model, z)[..., 0] - rho1
        error = float(np.max(np.abs(residual))) if residual.size else 0.0
        logger.debug("z_from_slope newton iteration %d: residual %.3e", iteration, error)
        if error < NEWTON_TOLERANCE:
            return z

        # d rho1 / d log|z| = -Im(z w'(z) / w) / pi.
        g = z * np.asarray(curve_derivative(model, z)) / np.asarray(solve_w(model, z))
        slope = -g.imag / np.pi
        above = residual * slope > 0
        upper = np.where(above, np.minimum(upper, log_r), upper)
        lower = np.where(above, lower, np.maximum(lower, log_r))

        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.clip(-residual / slope, -NEWTON_MAX_STEP, NEWTON_MAX_STEP)
        step = np.where(np.isfinite(step), step, np.where(above, -NEWTON_MAX_STEP, NEWTON_MAX_STEP))
        trial = log_r + step
        bounded = np.isfinite(lower) & np.isfinite(upper)
        escaped = (trial <= lower) | (trial >= upper)
        with np.errstate(invalid="ignore"):
            bisect = np.where(bounded, 0.5 * (lower + upper), 0.5 * (log_r + np.where(trial <= lower, lower, upper)))
        log_r = np.where(escaped, bisect, trial)

    raise ConvergenceError(
        f"{model.name}: z_from_slope did not converge in {NEWTON_MAX_ITER} iterations",
        residual=error,
    )


def z_from_slope(model: DimerModel, rho: SlopeLike, method: str = "auto") -> Any:
    """Return the unique ``z`` in the upper half plane with ``slope_from_z(z) = rho``.

    Args:
        model: Dimer model.
        rho: Slope or array of slopes, shape ``(..., 2)``.
        method: ``"auto"`` (closed form when the model has one), ``"closed"``
            or ``"newton"``.

    Raises:
        OutsidePolygonError: If a slope is not strictly inside the polygon.
        ConvergenceError: If the Newton iteration does not converge.
    """
    points = as_points(rho)
    inside = model.polygon.contains(points)
    if not np.all(inside):
        raise OutsidePolygonError(
            f"slope outside the {model.name} Newton polygon",
            slope=points[~inside].reshape(-1, 2)[0],
        )
    closed_form = _CLOSED_FORM_INVERSES.get(model.name) if model.branch_offset == 0 else None
    if method == "closed" and closed_form is None:
        raise ValidationError(f"model {model.name!r} has no closed-form inverse")
    if method not in {"auto", "closed", "newton"}:
        raise ValidationError(f"unknown inverse method {method!r}")
    if closed_form is not None and method != "newton":
        return _unwrap(closed_form(points))
    return _unwrap(_newton_inverse(model, points))


def is_liquid(model: DimerModel, rho: SlopeLike, delta: float = DEFAULT_MARGIN) -> Any:
    """Whether *rho* is inside the polygon with margin *delta* and away from integers."""
    if delta < 0:
        raise ValidationError(f"margin must be non-negative, got {delta}")
    points = as_points(rho)
    inside = model.polygon.contains(points, delta)
    off_lattice = np.all(np.abs(points - np.round(points)) >= delta, axis=-1)
    return _unwrap(inside & off_lattice)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeJacobian:
    """Real Jacobians with respect to ``(Re z, Im z)``.

    Attributes:
        slope: ``d(rho1, rho2) / d(Re z, Im z)``, shape ``(..., 2, 2)``.
        log_modulus: ``d(log|z|, log|w|) / d(Re z, Im z)``, shape ``(..., 2, 2)``.
    """

    slope: NDArray[np.float64]
    log_modulus: NDArray[np.float64]

    def log_modulus_by_slope(self) -> NDArray[np.float64]:
        """Return ``d(log|z|, log|w|) / d(rho1, rho2)``."""
        return self.log_modulus @ np.linalg.inv(self.slope)


def slope_jacobian(model: DimerModel, z: ArrayLike) -> SlopeJacobian:
    """Jacobians of the slope and log-modulus maps from holomorphic derivatives."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(solve_w(model, z))
    g1 = 1.0 / z
    g2 = np.asarray(curve_derivative(model, z, w)) / w
    slope = np.stack(
        [
            np.stack([-g2.imag, -g2.real], axis=-1),
            np.stack([g1.imag, g1.real], axis=-1),
        ],
        axis=-2,
    ) / np.pi
    log_modulus = np.stack(
        [
            np.stack([g1.real, -g1.imag], axis=-1),
            np.stack([g2.real, -g2.imag], axis=-1),
        ],
        axis=-2,
    )
    return SlopeJacobian(slope=slope, log_modulus=log_modulus)


def log_modulus_map(model: DimerModel, rho: SlopeLike) -> NDArray[np.float64]:
    """Return ``(log|z|, log|w|)`` at ``z = z_from_slope(rho)``, shape ``(..., 2)``."""
    z = np.asarray(z_from_slope(model, rho))
    w = np.asarray(solve_w(model, z))
    return np.stack([np.log(np.abs(z)), np.log(np.abs(w))], axis=-1)


def random_liquid_slopes(
    model: DimerModel, count: int, delta: float = DEFAULT_MARGIN, seed: int | None = 0
) -> NDArray[np.float64]:
    """Draw *count* slopes uniformly from the margin-``delta`` liquid region by rejection."""
    if count < 0:
        raise ValidationError(f"sample count must be non-negative, got {count}")
    inradius = model.polygon.inradius()
    if count and delta >= inradius:
        raise ValidationError(
            f"{model.name}: margin {delta} leaves no liquid slopes (inradius {inradius:.4f})",
            delta=delta,
        )
    rng = np.random.default_rng(seed)
    min1, min2, max1, max2 = model.polygon.bounding_box()
    accepted: list[NDArray] = []
    total = 0
    for _ in range(MAX_REJECTION_BATCHES):
        if total >= count:
            break
        batch = rng.uniform((min1, min2), (max1, max2), size=(max(4 * count, 16), 2))
        batch = batch[np.asarray(is_liquid(model, batch, delta), dtype=bool)]
        accepted.append(batch)
        total += len(batch)
    else:
        if total < count:
            raise ValidationError(
                f"{model.name}: margin {delta} leaves too few liquid slopes to sample {count}",
                delta=delta,
                drawn=total,
            )
    return np.concatenate(accepted)[:count] if accepted else np.empty((0, 2))


__all__ = [
    "DEFAULT_MARGIN",
    "HONEYCOMB",
    "MODELS",
    "SQUARE",
    "DimerModel",
    "NewtonPolygon",
    "Slope",
    "SlopeJacobian",
    "as_points",
    "curve_derivative",
    "eval_P",
    "eval_P_derivatives",
    "get_model",
    "is_liquid",
    "log_modulus_map",
    "random_liquid_slopes",
    "slope_from_z",
    "slope_jacobian",
    "solve_w",
    "z_from_slope",
]
