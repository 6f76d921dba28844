"""Growth speeds ``v(rho)``, their Hessians and the AKPZ classification.

A speed is either slope-native (given directly on the Newton polygon) or
z-composed, ``v(rho) = f(z_from_slope(rho))`` for a real function ``f`` on the
upper half plane. Hessians of z-composed speeds are taken by finite
differences in slope space, so no second derivatives of the inverse map are
needed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from akpz_lab.core.dimer_lattice import (
    DEFAULT_MARGIN,
    DimerModel,
    SlopeLike,
    as_points,
    is_liquid,
    z_from_slope,
)
from akpz_lab.core.runner import ParallelRunner
from akpz_lab.exceptions import ConfigError, OutsidePolygonError, ValidationError
from akpz_lab.utils.finite_diff import hessian_richardson, laplacian_5pt

logger = logging.getLogger(__name__)

DEFAULT_HESSIAN_STEP = 1e-3
LAPLACIAN_STEP = 1e-3
HARMONIC_TOLERANCE = 1e-6
DEFAULT_TAU = 1e-6

# Compact set of H on which a harmonic flag is verified at construction.
_HARMONIC_PROBES = (
    np.linspace(-1.0, 1.0, 5)[:, None] + 1j * np.linspace(1.5, 3.5, 5)[None, :]
).ravel()


class SpeedKind(str, Enum):
    SLOPE = "slope"
    Z = "z"


class AkpzLabel(str, Enum):
    """Sign class of ``det(D^2 v)``."""

    AKPZ = "AKPZ"
    ISOTROPIC = "ISOTROPIC"
    DEGENERATE = "DEGENERATE"


@dataclass(frozen=True)
class SpeedFunction:
    """A growth speed on the liquid slopes of a model.

    Attributes:
        name: Preset string or a free label.
        kind: Slope-native or z-composed.
        func: ``func(points)`` on arrays of shape ``(..., 2)`` for slope-native
            speeds, ``func(z)`` on complex arrays for z-composed ones.
        model: Model providing the polygon and the z-map.
        harmonic: Whether ``f`` is claimed harmonic; verified numerically.
    """

    name: str
    kind: SpeedKind
    func: Callable[[Any], Any] = field(compare=False)
    model: DimerModel
    harmonic: bool = False

    def __post_init__(self) -> None:
        """Verify a harmonic claim on sample points of the upper half plane."""
        if self.kind is SpeedKind.SLOPE and self.harmonic:
            raise ValidationError("the harmonic flag only applies to z-composed speeds")
        if self.harmonic:
            worst = float(np.max(np.abs(laplacian_f(self, _HARMONIC_PROBES))))
            if worst > HARMONIC_TOLERANCE:
                raise ValidationError(
                    f"speed {self.name!r} is flagged harmonic but its Laplacian reaches {worst:.3e}"
                )

    def f(self, z: ArrayLike) -> Any:
        """Evaluate ``f`` on complex input (z-composed speeds only)."""
        if self.kind is not SpeedKind.Z:
            raise ValidationError(f"speed {self.name!r} is slope-native")
        return self.func(np.asarray(z, dtype=complex))


@dataclass(frozen=True)
class AkpzClassification:
    """Classification of one slope by the sign of ``det(D^2 v)``."""

    rho: tuple[float, float]
    value: float
    hessian: NDArray[np.float64]
    det: float
    tolerance: float
    label: AkpzLabel


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_Z_PRESETS: dict[str, tuple[Callable[[NDArray], NDArray], bool]] = {
    "im-z": (lambda z: z.imag, True),
    "cft-domino": (lambda z: z.imag / np.pi, True),
    "re-z": (lambda z: z.real, True),
    "im-log-z": (lambda z: np.angle(z), True),
    "re-z2": (lambda z: (z * z).real, True),
    "abs-z2": (lambda z: np.abs(z) ** 2, False),
}

SPEED_PRESETS = (*_Z_PRESETS, "const:<c>", "quadratic:<a,b,c>")


def _parse_numbers(spec: str, count: int) -> list[float]:
    _, _, body = spec.partition(":")
    parts = [part.strip() for part in body.split(",")]
    try:
        numbers = [float(part) for part in parts]
    except ValueError:
        raise ConfigError(f"invalid numbers in speed preset {spec!r}", key="speed") from None
    if len(numbers) != count:
        raise ConfigError(
            f"speed preset {spec!r} needs {count} comma separated numbers", key="speed"
        )
    return numbers


def quadratic_speed(model: DimerModel, a: float, b: float, c: float) -> SpeedFunction:
    """Slope-native ``a rho1^2 + b rho1 rho2 + c rho2^2``."""

    def evaluate(points: NDArray) -> NDArray:
        rho1, rho2 = points[..., 0], points[..., 1]
        return a * rho1**2 + b * rho1 * rho2 + c * rho2**2

    return SpeedFunction(
        name=f"quadratic:{a:g},{b:g},{c:g}", kind=SpeedKind.SLOPE, func=evaluate, model=model
    )


def speed_from_preset(spec: str, model: DimerModel) -> SpeedFunction:
    """Build a speed from a preset string such as ``im-z`` or ``quadratic:1,0,1``.

    Raises:
        ConfigError: If the preset is unknown or malformed.
    """
    spec = spec.strip()
    if spec in _Z_PRESETS:
        func, harmonic = _Z_PRESETS[spec]
        return SpeedFunction(name=spec, kind=SpeedKind.Z, func=func, model=model, harmonic=harmonic)
    if spec.startswith("const:"):
        (constant,) = _parse_numbers(spec, 1)
        return SpeedFunction(
            name=spec,
            kind=SpeedKind.Z,
            func=lambda z: np.full(np.shape(z), constant),
            model=model,
            harmonic=True,
        )
    if spec.startswith("quadratic:"):
        return quadratic_speed(model, *_parse_numbers(spec, 3))
    raise ConfigError(
        f"unknown speed preset {spec!r} (choose from {', '.join(SPEED_PRESETS)})",
        key="speed",
        value=spec,
    )


# ---------------------------------------------------------------------------
# Evaluation and derivatives
# ---------------------------------------------------------------------------


def speed_eval(v: SpeedFunction, rho: SlopeLike, delta: float = 0.0) -> Any:
    """Evaluate ``v`` at liquid slopes.

    Raises:
        OutsidePolygonError: If a slope is not liquid with margin ``delta``.
    """
    points = as_points(rho)
    liquid = np.asarray(is_liquid(v.model, points, delta))
    if not np.all(liquid):
        raise OutsidePolygonError(
            f"slope outside the {v.model.name} liquid region",
            slope=points[~liquid].reshape(-1, 2)[0] if points.ndim > 1 else points,
        )
    if v.kind is SpeedKind.SLOPE:
        value = v.func(points)
    else:
        value = v.func(np.asarray(z_from_slope(v.model, points), dtype=complex))
    value = np.asarray(value, dtype=float)
    return value.item() if value.ndim == 0 else value


def _default_step(z: NDArray) -> NDArray:
    return np.minimum(LAPLACIAN_STEP, z.imag / 8.0)


def laplacian_f(v: SpeedFunction, z: ArrayLike, step: float | None = None) -> Any:
    """Five-point Laplacian of ``f`` at ``z`` (z-composed speeds only).

    The default step is ``min(1e-3, Im z / 8)`` per point.
    """
    if v.kind is not SpeedKind.Z:
        raise ValidationError(f"speed {v.name!r} has no complex-plane function")
    z = np.asarray(z, dtype=complex)
    if step is None:
        step = _default_step(z)
    if np.any(step >= z.imag / 4.0):
        raise ValidationError(f"Laplacian step {step} must stay below Im z / 4")
    value = laplacian_5pt(v.func, z, step)
    return value.item() if np.ndim(value) == 0 else value


def f_gradient(v: SpeedFunction, z: ArrayLike, step: float | None = None) -> tuple[Any, Any]:
    """Central differences ``(df/dRe z, df/dIm z)``."""
    z = np.asarray(z, dtype=complex)
    if step is None:
        step = _default_step(z)
    f_re = (v.f(z + step) - v.f(z - step)) / (2.0 * step)
    f_im = (v.f(z + 1j * step) - v.f(z - 1j * step)) / (2.0 * step)
    return f_re, f_im


def wirtinger_derivative(v: SpeedFunction, z: ArrayLike, step: float | None = None) -> Any:
    """``df/dz = (1/2) (d/dRe z - i d/dIm z) f``."""
    f_re, f_im = f_gradient(v, z, step)
    return 0.5 * (np.asarray(f_re) - 1j * np.asarray(f_im))


def speed_gradient(v: SpeedFunction, rho: SlopeLike, step: float = DEFAULT_HESSIAN_STEP) -> NDArray:
    """Central-difference ``Dv``; shape ``(..., 2)``."""
    points = as_points(rho)
    offsets = np.eye(2) * step
    return np.stack(
        [
            (np.asarray(speed_eval(v, points + e)) - np.asarray(speed_eval(v, points - e)))
            / (2.0 * step)
            for e in offsets
        ],
        axis=-1,
    )


def speed_hessian(
    v: SpeedFunction,
    rho: SlopeLike,
    step: float = DEFAULT_HESSIAN_STEP,
    delta: float | None = None,
) -> NDArray[np.float64]:
    """Symmetrised, Richardson-extrapolated central-difference Hessian ``D^2 v``.

    Vectorised over slopes; returns shape ``(..., 2, 2)``.

    Raises:
        OutsidePolygonError: If a slope is not liquid with margin ``delta``.
        ValidationError: If ``delta <= 2 * step``.
    """
    delta = v.model.polygon.margin if delta is None else delta
    if step <= 0 or delta <= 2 * step:
        raise ValidationError(f"need 0 < 2 * step < margin, got step={step}, margin={delta}")
    points = as_points(rho)
    if not np.all(is_liquid(v.model, points, delta)):
        raise OutsidePolygonError(f"slope is not {v.model.name} liquid with margin {delta}")
    return hessian_richardson(lambda p: np.asarray(speed_eval(v, p)), points, step).matrix


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def classification_tolerance(hessian: ArrayLike, tau: float = DEFAULT_TAU) -> Any:
    """Band half-width ``tau * max(1, ||H||_F^2)``."""
    norm_sq = np.sum(np.asarray(hessian) ** 2, axis=(-1, -2))
    return tau * np.maximum(1.0, norm_sq)


def _label(det: float, band: float) -> AkpzLabel:
    if det < -band:
        return AkpzLabel.AKPZ
    if det > band:
        return AkpzLabel.ISOTROPIC
    return AkpzLabel.DEGENERATE


def classify_many(
    v: SpeedFunction,
    points: ArrayLike,
    tau: float = DEFAULT_TAU,
    step: float = DEFAULT_HESSIAN_STEP,
    delta: float | None = None,
) -> list[AkpzClassification]:
    """Classify an array of slopes of shape ``(k, 2)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if points.size == 0:
        return []
    hessians = speed_hessian(v, points, step, delta)
    values = np.atleast_1d(speed_eval(v, points))
    dets = np.linalg.det(hessians)
    bands = classification_tolerance(hessians, tau)
    return [
        AkpzClassification(
            rho=(float(point[0]), float(point[1])),
            value=float(value),
            hessian=hessian,
            det=float(det),
            tolerance=float(band),
            label=_label(det, band),
        )
        for point, value, hessian, det, band in zip(points, values, hessians, dets, bands)
    ]


def akpz_classify(
    v: SpeedFunction,
    rho: SlopeLike,
    tau: float = DEFAULT_TAU,
    step: float = DEFAULT_HESSIAN_STEP,
) -> AkpzClassification:
    """Classify one liquid slope by the tau-banded sign of ``det(D^2 v)``."""
    return classify_many(v, as_points(rho).reshape(1, 2), tau, step)[0]


def slope_grid(model: DimerModel, resolution: int, delta: float) -> NDArray[np.float64]:
    """Cell-centred slopes over the polygon's bounding box, filtered to the liquid interior.

    Rows are in lexicographic order of ``(rho1, rho2)``.
    """
    if resolution < 1:
        raise ValidationError(f"resolution must be >= 1, got {resolution}")
    min1, min2, max1, max2 = model.polygon.bounding_box()
    axis1 = min1 + (np.arange(resolution) + 0.5) * (max1 - min1) / resolution
    axis2 = min2 + (np.arange(resolution) + 0.5) * (max2 - min2) / resolution
    grid = np.stack(np.meshgrid(axis1, axis2, indexing="ij"), axis=-1).reshape(-1, 2)
    return grid[np.asarray(is_liquid(model, grid, delta), dtype=bool)]


def akpz_map(
    v: SpeedFunction,
    resolution: int,
    delta: float = DEFAULT_MARGIN,
    tau: float = DEFAULT_TAU,
    runner: ParallelRunner | None = None,
) -> list[AkpzClassification]:
    """Classify every slope of the margin-``delta`` grid.

    Chunks run on ``runner``'s thread pool; row order is lexicographic in
    ``rho`` regardless of scheduling.
    """
    grid = slope_grid(v.model, resolution, delta)
    step = min(DEFAULT_HESSIAN_STEP, delta / 4.0) if delta > 0 else DEFAULT_HESSIAN_STEP
    runner = runner or ParallelRunner()
    rows: Sequence[NDArray] = list(grid)
    logger.info("Classifying %d slopes for %s on %s", len(rows), v.name, v.model.name)
    return runner.map_chunks(
        lambda chunk: classify_many(v, np.asarray(chunk), tau, step, delta), rows
    )


# ---------------------------------------------------------------------------
# Obstruction form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObstructionCertificate:
    """Numerical check that the obstruction form cannot vanish.

    ``applies`` is true when ``Sigma`` is positive definite, ``D^2 h`` is
    non-zero and ``D^2 v`` is definite; ``holds`` then says the form is
    non-zero with the sign of ``D^2 v``.
    """

    value: float
    applies: bool
    holds: bool


def obstruction(sigma_matrix: ArrayLike, hess_h: ArrayLike, hess_v: ArrayLike) -> Any:
    """``sum_{lk} D^2v_{lk} A_{lk}`` with ``A = D^2h Sigma D^2h``; vectorised."""
    sigma_matrix = np.asarray(sigma_matrix, dtype=float)
    hess_h = np.asarray(hess_h, dtype=float)
    hess_v = np.asarray(hess_v, dtype=float)
    contraction = hess_h @ sigma_matrix @ hess_h
    value = np.sum(hess_v * contraction, axis=(-1, -2))
    return value.item() if np.ndim(value) == 0 else value


def obstruction_certificate(
    sigma_matrix: ArrayLike, hess_h: ArrayLike, hess_v: ArrayLike, tolerance: float = 1e-12
) -> ObstructionCertificate:
    """Check that a definite ``D^2 v`` forces a non-zero obstruction form."""
    sigma_matrix = np.asarray(sigma_matrix, dtype=float)
    hess_v = np.asarray(hess_v, dtype=float)
    value = float(obstruction(sigma_matrix, hess_h, hess_v))
    sigma_pd = bool(np.all(np.linalg.eigvalsh(sigma_matrix) > 0))
    h_nonzero = bool(np.linalg.norm(hess_h) > tolerance)
    definite = bool(np.linalg.det(hess_v) > tolerance)
    applies = sigma_pd and h_nonzero and definite
    holds = applies and abs(value) > tolerance and np.sign(value) == np.sign(np.trace(hess_v))
    return ObstructionCertificate(value=value, applies=applies, holds=bool(holds))


__all__ = [
    "AkpzClassification",
    "AkpzLabel",
    "ObstructionCertificate",
    "SPEED_PRESETS",
    "SpeedFunction",
    "SpeedKind",
    "akpz_classify",
    "akpz_map",
    "classify_many",
    "f_gradient",
    "laplacian_f",
    "obstruction",
    "obstruction_certificate",
    "quadratic_speed",
    "slope_grid",
    "speed_eval",
    "speed_from_preset",
    "speed_gradient",
    "speed_hessian",
    "wirtinger_derivative",
]
