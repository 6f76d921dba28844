"""Finite-difference derivatives, Richardson extrapolation and grid stencils.

Point-wise helpers take a vectorised callable ``func(points) -> values`` where
``points`` has shape ``(..., d)`` and ``values`` shape ``(...)``. Grid helpers
work on arrays indexed ``[i1, i2]`` (axis 0 runs along ``x1``) and return
``nan`` on the one-node boundary ring.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from akpz_lab.exceptions import NumericalError

VectorFunc = Callable[[NDArray[np.float64]], NDArray]

# Pre-symmetrisation asymmetry accepted from a finite-difference Hessian.
ASYMMETRY_TOLERANCE = 1e-4


@dataclass(frozen=True)
class HessianEstimate:
    """Symmetrised Hessian with the asymmetry seen before symmetrisation."""

    matrix: NDArray[np.float64]
    asymmetry: NDArray[np.float64]


def central_gradient(func: VectorFunc, points: ArrayLike, step: float) -> NDArray:
    """Return the central-difference gradient of *func* at *points*."""
    points = np.asarray(points, dtype=float)
    offsets = np.eye(points.shape[-1]) * step
    return np.stack(
        [(func(points + e) - func(points - e)) / (2.0 * step) for e in offsets],
        axis=-1,
    )


def central_hessian(func: VectorFunc, points: ArrayLike, step: float) -> NDArray:
    """Return the Jacobian of the central-difference gradient (not symmetrised).

    Row ``k`` holds the derivative of the gradient along ``x_k``; the diagonal
    therefore uses an effective step of ``2 * step``.
    """
    points = np.asarray(points, dtype=float)
    offsets = np.eye(points.shape[-1]) * step
    rows = [
        (central_gradient(func, points + e, step) - central_gradient(func, points - e, step))
        / (2.0 * step)
        for e in offsets
    ]
    return np.stack(rows, axis=-2)


def taylor_stencil(
    func: VectorFunc, point: ArrayLike, step: float
) -> tuple[float, NDArray[np.float64], NDArray[np.float64]]:
    """Value, fourth-order gradient and second-order Hessian of a 2-D function.

    All thirteen stencil points are passed to *func* in one call.
    """
    point = np.asarray(point, dtype=float)
    e1, e2 = np.eye(2) * step
    stencil = np.stack(
        [
            point,
            point + e1, point - e1, point + 2 * e1, point - 2 * e1,
            point + e2, point - e2, point + 2 * e2, point - 2 * e2,
            point + e1 + e2, point + e1 - e2, point - e1 + e2, point - e1 - e2,
        ]
    )
    f = np.asarray(func(stencil), dtype=float)
    f0 = f[0]
    gradient = np.array(
        [
            (-f[3] + 8 * f[1] - 8 * f[2] + f[4]) / (12 * step),
            (-f[7] + 8 * f[5] - 8 * f[6] + f[8]) / (12 * step),
        ]
    )
    h11 = (f[1] - 2 * f0 + f[2]) / step**2
    h22 = (f[5] - 2 * f0 + f[6]) / step**2
    h12 = (f[9] - f[10] - f[11] + f[12]) / (4 * step**2)
    return float(f0), gradient, np.array([[h11, h12], [h12, h22]])


def richardson(coarse: ArrayLike, fine: ArrayLike, order: int = 2) -> NDArray:
    """Combine estimates at steps ``h`` and ``h/2`` to cancel the ``h**order`` term."""
    factor = 2.0**order
    return (factor * np.asarray(fine) - np.asarray(coarse)) / (factor - 1.0)


def symmetrize(matrix: ArrayLike) -> NDArray:
    """Return ``(M + M^T) / 2`` over the trailing two axes."""
    matrix = np.asarray(matrix)
    return 0.5 * (matrix + np.swapaxes(matrix, -1, -2))


def hessian_richardson(
    func: VectorFunc,
    points: ArrayLike,
    step: float,
    check_symmetry: bool = True,
) -> HessianEstimate:
    """Richardson-extrapolated (steps ``h`` and ``h/2``) symmetrised Hessian.

    Raises:
        NumericalError: If the raw Hessian is asymmetric beyond
            :data:`ASYMMETRY_TOLERANCE` (relative to its scale).
    """
    raw = richardson(
        central_hessian(func, points, step), central_hessian(func, points, step / 2.0)
    )
    asymmetry = np.abs(raw[..., 0, 1] - raw[..., 1, 0])
    if check_symmetry:
        scale = np.maximum(1.0, np.max(np.abs(raw), axis=(-1, -2)))
        if np.any(asymmetry > ASYMMETRY_TOLERANCE * scale):
            raise NumericalError(
                "finite-difference Hessian is not symmetric",
                asymmetry=float(np.max(asymmetry)),
            )
    return HessianEstimate(matrix=symmetrize(raw), asymmetry=asymmetry)


# ---------------------------------------------------------------------------
# Grid stencils
# ---------------------------------------------------------------------------


def _interior(values: NDArray, out_dtype: type) -> NDArray:
    return np.full(values.shape, np.nan, dtype=out_dtype)


def grid_gradient(values: ArrayLike, dx1: float, dx2: float) -> tuple[NDArray, NDArray]:
    """Second-order central first derivatives; ``nan`` on the boundary ring."""
    values = np.asarray(values)
    dtype = complex if np.iscomplexobj(values) else float
    d1 = _interior(values, dtype)
    d2 = _interior(values, dtype)
    d1[1:-1, 1:-1] = (values[2:, 1:-1] - values[:-2, 1:-1]) / (2.0 * dx1)
    d2[1:-1, 1:-1] = (values[1:-1, 2:] - values[1:-1, :-2]) / (2.0 * dx2)
    return d1, d2


def grid_hessian(
    values: ArrayLike, dx1: float, dx2: float
) -> tuple[NDArray, NDArray, NDArray]:
    """Second-order central second derivatives ``(h11, h12, h22)``."""
    values = np.asarray(values)
    dtype = complex if np.iscomplexobj(values) else float
    h11 = _interior(values, dtype)
    h12 = _interior(values, dtype)
    h22 = _interior(values, dtype)
    centre = values[1:-1, 1:-1]
    h11[1:-1, 1:-1] = (values[2:, 1:-1] - 2.0 * centre + values[:-2, 1:-1]) / dx1**2
    h22[1:-1, 1:-1] = (values[1:-1, 2:] - 2.0 * centre + values[1:-1, :-2]) / dx2**2
    h12[1:-1, 1:-1] = (
        values[2:, 2:] - values[2:, :-2] - values[:-2, 2:] + values[:-2, :-2]
    ) / (4.0 * dx1 * dx2)
    return h11, h12, h22


def laplacian_5pt(func: Callable[[NDArray], NDArray], z: ArrayLike, step: float) -> NDArray:
    """Five-point Laplacian of a real function of a complex argument."""
    z = np.asarray(z, dtype=complex)
    return (
        func(z + step) + func(z - step) + func(z + 1j * step) + func(z - 1j * step) - 4.0 * func(z)
    ) / step**2
