"""Equilibrium shapes and their residual operators.

Shapes are built two ways: by minimising the discrete surface-tension
functional with fixed boundary values, and by solving the implicit-line
family ``x2 + x1 * phi(z) = C(z)`` of the complex Burgers equation with
``phi = z P_z / (w P_w)``. Grid arrays are indexed ``[i1, i2]`` with axis 0
running along ``x1``; every residual excludes the one-node boundary ring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import spsolve

from akpz_lab.core.dimer_lattice import (
    SINGULAR_TOLERANCE,
    DimerModel,
    SlopeLike,
    as_points,
    eval_P_derivatives,
    is_liquid,
    log_modulus_map,
    slope_from_z,
    solve_w,
    z_from_slope,
)
from akpz_lab.core.surface_tension import (
    sigma_dual,
    sigma_gradient_dual,
    sigma_hessian_dual,
)
from akpz_lab.exceptions import (
    BranchError,
    ConfigError,
    ConvergenceError,
    CurlError,
    OutsidePolygonError,
    ValidationError,
)
from akpz_lab.utils.finite_diff import grid_gradient, grid_hessian

logger = logging.getLogger(__name__)

IMPLICIT_TOLERANCE = 1e-12
IMPLICIT_MAX_ITER = 60
IMPLICIT_TRUST = 0.5
IMPLICIT_BACKTRACK = 30
FOLD_TOLERANCE = 1e-12
CURL_DENSITY_TOLERANCE = 1e-2
LIPSCHITZ_SLACK = 1e-9
RATIO_DERIVATIVE_FLOOR = 1e-10
RATIO_IMAG_FLOOR = 1e-8
RATIO_TOLERANCE = 1e-6
SIGMA_CHUNK = 2048


# ---------------------------------------------------------------------------
# Grid types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridGeometry:
    """Uniform rectangular grid: ``x = origin + (i1 * dx1, i2 * dx2)``."""

    origin: tuple[float, float]
    spacing: tuple[float, float]
    shape: tuple[int, int]

    def __post_init__(self) -> None:
        """Validate sizes."""
        if min(self.shape) < 3:
            raise ValidationError(f"grids need at least 3 x 3 nodes, got {self.shape}")
        if min(self.spacing) <= 0:
            raise ValidationError(f"grid spacing must be positive, got {self.spacing}")

    @classmethod
    def from_extent(
        cls, extent: tuple[float, float, float, float], shape: tuple[int, int]
    ) -> "GridGeometry":
        """Grid covering ``(x1min, x1max, x2min, x2max)`` with corner nodes included."""
        x1min, x1max, x2min, x2max = extent
        n1, n2 = shape
        if x1max <= x1min or x2max <= x2min:
            raise ValidationError(f"empty extent {extent}")
        return cls(
            origin=(float(x1min), float(x2min)),
            spacing=((x1max - x1min) / (n1 - 1), (x2max - x2min) / (n2 - 1)),
            shape=(int(n1), int(n2)),
        )

    @property
    def extent(self) -> tuple[float, float, float, float]:
        (o1, o2), (d1, d2), (n1, n2) = self.origin, self.spacing, self.shape
        return (o1, o1 + d1 * (n1 - 1), o2, o2 + d2 * (n2 - 1))

    def axes(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        (o1, o2), (d1, d2), (n1, n2) = self.origin, self.spacing, self.shape
        return o1 + d1 * np.arange(n1), o2 + d2 * np.arange(n2)

    def coordinates(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Node coordinates ``(X1, X2)`` with ``ij`` indexing."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def ring_mask(self) -> NDArray[np.bool_]:
        """True on the one-node boundary ring."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def refined(self) -> "GridGeometry":
        """Same extent with the spacing halved."""
        n1, n2 = self.shape
        return GridGeometry.from_extent(self.extent, (2 * n1 - 1, 2 * n2 - 1))

    def centre_index(self) -> tuple[int, int]:
        return self.shape[0] // 2, self.shape[1] // 2


@dataclass(frozen=True)
class HeightField:
    """Scalar heights on a uniform grid."""

    values: NDArray[np.float64]
    geometry: GridGeometry
    model_name: str | None = None

    def __post_init__(self) -> None:
        """Check the values match the geometry."""
        if np.shape(self.values) != self.geometry.shape:
            raise ValidationError(
                f"height values of shape {np.shape(self.values)} do not match {self.geometry.shape}"
            )

    @property
    def boundary_mask(self) -> NDArray[np.bool_]:
        return self.geometry.ring_mask()

    @classmethod
    def from_function(
        cls, geometry: GridGeometry, func: Callable[[NDArray, NDArray], NDArray], model_name: str | None = None
    ) -> "HeightField":
        x1, x2 = geometry.coordinates()
        return cls(np.asarray(func(x1, x2), dtype=float), geometry, model_name)

    @classmethod
    def affine(
        cls, geometry: GridGeometry, rho: SlopeLike, offset: float = 0.0, model_name: str | None = None
    ) -> "HeightField":
        """``h = offset + rho . x``."""
        rho1, rho2 = as_points(rho).reshape(2)
        return cls.from_function(geometry, lambda x1, x2: offset + rho1 * x1 + rho2 * x2, model_name)

    def interior_slopes(self) -> NDArray[np.float64]:
        """Central-difference gradients, shape ``(n1, n2, 2)``, ``nan`` on the ring."""
        d1, d2 = grid_gradient(self.values, *self.geometry.spacing)
        return np.stack([d1, d2], axis=-1)

    def lipschitz_ok(self, model: DimerModel) -> bool:
        """Whether interior discrete gradients lie in the polygon (slack ``1e-9``)."""
        slopes = self.interior_slopes()[1:-1, 1:-1].reshape(-1, 2)
        return bool(np.all(np.min(model.polygon.edge_distances(slopes), axis=-1) >= -LIPSCHITZ_SLACK))

    def with_values(self, values: NDArray) -> "HeightField":
        return HeightField(np.asarray(values, dtype=float), self.geometry, self.model_name)


@dataclass(frozen=True)
class ComplexField:
    """Complex ``z`` per node, aligned with a height grid.

    Attributes:
        z: Complex values; entries where ``mask`` is false are meaningless.
        geometry: Grid geometry.
        model: Model giving ``w = solve_w(z)``.
        mask: True where the node carries a valid value.
        derivatives: Optional exact ``(z_x1, z_x2)`` from implicit
            differentiation.
        branch_consistent: Neighbouring valid nodes differ by less than
            ``pi / 2`` in argument.
    """

    z: NDArray[np.complex128]
    geometry: GridGeometry
    model: DimerModel
    mask: NDArray[np.bool_] | None = None
    derivatives: tuple[NDArray, NDArray] | None = None
    branch_consistent: bool = field(init=False, default=False)

    def __post_init__(self) -> None:
        """Check the upper half plane and evaluate branch continuity."""
        z = np.asarray(self.z, dtype=complex)
        if z.shape != self.geometry.shape:
            raise ValidationError(f"z values of shape {z.shape} do not match {self.geometry.shape}")
        mask = np.ones(z.shape, dtype=bool) if self.mask is None else np.asarray(self.mask, bool)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "mask", mask)
        if np.any(z[mask].imag <= 0):
            raise BranchError("complex field leaves the upper half plane")
        jumps = []
        for axis in (0, 1):
            head = [slice(None), slice(None)]
            tail = [slice(None), slice(None)]
            head[axis], tail[axis] = slice(1, None), slice(None, -1)
            both = mask[tuple(head)] & mask[tuple(tail)]
            ratio = z[tuple(head)][both] / z[tuple(tail)][both]
            jumps.append(np.abs(np.angle(ratio)))
        worst = max((float(j.max()) for j in jumps if j.size), default=0.0)
        object.__setattr__(self, "branch_consistent", worst < np.pi / 2)

    @classmethod
    def constant(cls, z0: complex, geometry: GridGeometry, model: DimerModel) -> "ComplexField":
        """A field equal to ``z0`` everywhere (a trivial Burgers solution)."""
        zeros = np.zeros(geometry.shape, dtype=complex)
        return cls(
            z=np.full(geometry.shape, complex(z0)),
            geometry=geometry,
            model=model,
            derivatives=(zeros, zeros.copy()),
        )

    @property
    def complete(self) -> bool:
        return bool(np.all(self.mask))

    def w(self) -> NDArray[np.complex128]:
        """``w = solve_w(z)`` at valid nodes, ``nan`` elsewhere."""
        out = np.full(self.z.shape, np.nan + 0j)
        out[self.mask] = solve_w(self.model, self.z[self.mask])
        return out

    def slopes(self) -> NDArray[np.float64]:
        """Node-wise ``slope_from_z``; shape ``(n1, n2, 2)``, ``nan`` at masked nodes."""
        out = np.full((*self.z.shape, 2), np.nan)
        out[self.mask] = slope_from_z(self.model, self.z[self.mask]).as_array()
        return out


@dataclass(frozen=True)
class ResidualField:
    """Residual grids on the geometry of the parent height field."""

    el: NDArray[np.float64]
    burgers: NDArray[np.complex128]
    hessian_norm: NDArray[np.float64]
    geometry: GridGeometry

    def max_el(self, region: NDArray[np.bool_] | None = None) -> float:
        values = self.el if region is None else np.where(region, self.el, np.nan)
        return float(np.nanmax(np.abs(values)))

    def max_burgers(self, region: NDArray[np.bool_] | None = None) -> float:
        values = self.burgers if region is None else np.where(region, self.burgers, np.nan)
        return float(np.nanmax(np.abs(values)))


# ---------------------------------------------------------------------------
# Residual operators
# ---------------------------------------------------------------------------


def _check_liquid_nodes(model: DimerModel, slopes: NDArray, delta: float) -> None:
    interior = slopes[1:-1, 1:-1]
    liquid = np.asarray(is_liquid(model, interior, delta), dtype=bool)
    if not np.all(liquid):
        i, j = np.argwhere(~liquid)[0]
        raise OutsidePolygonError(
            f"non-liquid slope at interior node {(int(i) + 1, int(j) + 1)}",
            node=(int(i) + 1, int(j) + 1),
            slope=interior[i, j],
        )


def el_residual(h: HeightField, model: DimerModel, delta: float | None = None) -> ResidualField:
    """Euler-Lagrange residual ``L[h] = sum sigma_ij(grad h) h_ij``.

    ``Sigma`` comes from the dual route. The Burgers residual of ``z(grad h)``
    and the Frobenius norm of ``D^2 h`` are returned alongside.

    Raises:
        OutsidePolygonError: At the first interior node whose slope is not
            liquid with margin ``delta``.
    """
    delta = model.polygon.margin if delta is None else delta
    dx1, dx2 = h.geometry.spacing
    slopes = h.interior_slopes()
    _check_liquid_nodes(model, slopes, delta)
    h11, h12, h22 = grid_hessian(h.values, dx1, dx2)

    inner = slopes[1:-1, 1:-1]
    sigma_matrix = sigma_hessian_dual(model, inner)
    el = np.full(h.geometry.shape, np.nan)
    el[1:-1, 1:-1] = (
        sigma_matrix[..., 0, 0] * h11[1:-1, 1:-1]
        + 2.0 * sigma_matrix[..., 0, 1] * h12[1:-1, 1:-1]
        + sigma_matrix[..., 1, 1] * h22[1:-1, 1:-1]
    )
    hessian_norm = np.sqrt(h11**2 + 2.0 * h12**2 + h22**2)

    mask = np.zeros(h.geometry.shape, dtype=bool)
    mask[1:-1, 1:-1] = True
    z = np.full(h.geometry.shape, 1j)
    z[1:-1, 1:-1] = z_from_slope(model, inner)
    burgers = burgers_residual(ComplexField(z, h.geometry, model, mask=mask), model)
    return ResidualField(el=el, burgers=burgers, hessian_norm=hessian_norm, geometry=h.geometry)


def burgers_residual(zf: ComplexField, model: DimerModel) -> NDArray[np.complex128]:
    """Central-difference ``Delta = z w_x2 + w z_x1``; ``nan`` where a stencil is incomplete."""
    dx1, dx2 = zf.geometry.spacing
    z = np.where(zf.mask, zf.z, np.nan)
    w = zf.w()
    z_x1, _ = grid_gradient(z, dx1, dx2)
    _, w_x2 = grid_gradient(w, dx1, dx2)
    return z * w_x2 + w * z_x1


# ---------------------------------------------------------------------------
# Implicit Burgers solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalyticProfile:
    """An analytic ``C(z)`` with its derivative."""

    name: str
    value: Callable[[NDArray], NDArray]
    derivative: Callable[[NDArray], NDArray]


def profile_from_preset(spec: str) -> AnalyticProfile:
    """Parse ``const-i`` or ``affine:<a,b>`` (``C = a + b z``; complex literals allowed).

    Raises:
        ConfigError: For unknown or malformed presets.
    """
    spec = spec.strip()
    if spec == "const-i":
        return AnalyticProfile(
            name=spec,
            value=lambda z: np.full(np.shape(z), 1j),
            derivative=lambda z: np.zeros(np.shape(z), dtype=complex),
        )
    if spec.startswith("affine:"):
        parts = spec.partition(":")[2].split(",")
        try:
            a, b = (complex(part.strip().replace("i", "j")) for part in parts)
        except ValueError:
            raise ConfigError(f"invalid affine profile {spec!r}; expected affine:<a,b>", key="C") from None
        return AnalyticProfile(
            name=spec,
            value=lambda z: a + b * np.asarray(z),
            derivative=lambda z: np.full(np.shape(z), b, dtype=complex),
        )
    raise ConfigError(f"unknown profile {spec!r} (choose const-i or affine:<a,b>)", key="C", value=spec)


def characteristic_slope(model: DimerModel, z: ArrayLike) -> Any:
    """``phi(z) = z P_z / (w P_w)`` on the spectral curve."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(solve_w(model, z))
    p_z, p_w = eval_P_derivatives(model, z, w)
    return z * np.asarray(p_z) / (w * np.asarray(p_w))


def _masked_characteristic_slope(model: DimerModel, z: NDArray) -> NDArray:
    """``phi(z)``, with ``nan`` off the upper half plane and near poles or zeros of ``w(z)``."""
    z = np.asarray(z, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        a0, a1 = model.linear_coefficients(z)
        w = -a0 / a1
    bad = (
        ~np.isfinite(z)
        | (z.imag <= 0)
        | (np.abs(a1) < SINGULAR_TOLERANCE * np.maximum(1.0, np.abs(a0)))
        | ~np.isfinite(w)
        | (np.abs(w) < SINGULAR_TOLERANCE)
    )
    p_z, p_w = eval_P_derivatives(model, np.where(bad, 1j, z), np.where(bad, 1.0, w))
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(bad, 1j, z) * np.asarray(p_z) / (np.where(bad, 1.0, w) * np.asarray(p_w))
    return np.where(bad, np.nan + 0j, phi)


def _relation(
    model: DimerModel, profile: AnalyticProfile, x1: NDArray, x2: NDArray, z: NDArray
) -> NDArray:
    return x2 + x1 * _masked_characteristic_slope(model, z) - profile.value(z)


def _relation_slope(model: DimerModel, profile: AnalyticProfile, x1: NDArray, z: NDArray) -> NDArray:
    step = 1e-6 * np.maximum(1.0, np.abs(z))
    derivative = (
        _masked_characteristic_slope(model, z + step) - _masked_characteristic_slope(model, z - step)
    ) / (2 * step)
    return x1 * derivative - profile.derivative(z)


def _implicit_newton(
    model: DimerModel,
    profile: AnalyticProfile,
    x1: NDArray,
    x2: NDArray,
    start: NDArray,
) -> tuple[NDArray, NDArray, NDArray]:
    """Damped complex Newton for ``x2 + x1 phi(z) - C(z) = 0``.

    Steps are capped at ``IMPLICIT_TRUST * max(1, |z|)`` and halved until
    ``|residual|`` decreases inside the upper half plane. Nodes that cannot
    make progress stop unconverged. Returns ``(z, converged, folded)``;
    ``folded`` marks nodes whose relation slope vanished.
    """
    z = np.asarray(start, dtype=complex).copy()
    residual = _relation(model, profile, x1, x2, z)
    active = np.isfinite(residual)
    converged = np.zeros(z.shape, dtype=bool)
    folded = np.zeros(z.shape, dtype=bool)
    for _ in range(IMPLICIT_MAX_ITER):
        done = active & (np.abs(residual) < IMPLICIT_TOLERANCE)
        converged |= done
        active &= ~done
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        za = z.ravel()[idx]
        ra = residual.ravel()[idx]
        slope = _relation_slope(model, profile, x1.ravel()[idx], za)
        flat = ~np.isfinite(slope) | (np.abs(slope) < FOLD_TOLERANCE)
        folded.ravel()[idx[flat & np.isfinite(slope)]] = True
        step = -ra / np.where(flat, 1.0, slope)
        limit = IMPLICIT_TRUST * np.maximum(1.0, np.abs(za))
        step = np.where(np.abs(step) > limit, step * limit / np.maximum(np.abs(step), 1e-300), step)

        damping = np.where(flat, 0.0, 1.0)
        accepted = np.zeros(idx.shape, dtype=bool)
        trial_z = za.copy()
        trial_r = ra.copy()
        for _ in range(IMPLICIT_BACKTRACK):
            pending = ~accepted & (damping > 0)
            if not np.any(pending):
                break
            candidate = za[pending] + damping[pending] * step[pending]
            candidate_r = _relation(
                model,
                profile,
                x1.ravel()[idx[pending]],
                x2.ravel()[idx[pending]],
                candidate,
            )
            better = np.isfinite(candidate_r) & (
                np.abs(candidate_r) < (1.0 - 1e-4 * damping[pending]) * np.abs(ra[pending])
            )
            where = np.flatnonzero(pending)
            trial_z[where[better]] = candidate[better]
            trial_r[where[better]] = candidate_r[better]
            accepted[where[better]] = True
            damping[where[~better]] *= 0.5

        z.ravel()[idx] = trial_z
        residual.ravel()[idx] = trial_r
        active.ravel()[idx[~accepted]] = False
    converged |= active & (np.abs(residual) < IMPLICIT_TOLERANCE)
    return z, converged & (z.imag > 0), folded & ~converged


def _seed_candidates() -> list[complex]:
    preferred = [1j, 0.5 + 0.5j, -0.5 + 0.5j, 2j, 0.5j]
    grid = [complex(re, im) for im in (0.25, 0.75, 1.5, 3.0) for re in np.linspace(-3.0, 3.0, 13)]
    return preferred + [c for c in grid if c not in preferred]


def solve_burgers_implicit(
    model: DimerModel,
    profile: AnalyticProfile,
    geometry: GridGeometry,
    seed: complex | None = None,
) -> ComplexField:
    """Solve ``x2 + x1 phi(z) = C(z)`` node by node by Newton continuation.

    Without a seed, a fixed list of starts in the upper half plane is tried
    at the origin. The first row (``i2 = 0``) is then swept from the origin
    one node at a time; every further row is solved at once starting from
    the row below. Nodes where Newton stalls or leaves the upper half plane
    are masked.

    Raises:
        ValidationError: If ``seed`` does not solve the relation at the origin.
        ConvergenceError: If no seed converges or the relation folds.
    """
    x1, x2 = geometry.coordinates()
    origin = (x1[:1, :1], x2[:1, :1])
    if seed is not None:
        seed_residual = abs(_relation(model, profile, *origin, np.array([[complex(seed)]])).item())
        if not seed_residual <= 1e-6:
            raise ValidationError(
                f"seed {seed} does not solve the implicit relation at the origin", residual=seed_residual
            )
        candidates = [complex(seed)]
    else:
        candidates = _seed_candidates()
    for candidate in candidates:
        start, ok, _ = _implicit_newton(model, profile, *origin, np.array([[candidate]]))
        if ok.item():
            logger.debug("implicit Burgers seed %s converged to %s", candidate, start.item())
            break
    else:
        raise ConvergenceError("no seed solves the implicit relation at the grid origin")

    z = np.full(geometry.shape, np.nan + 0j)
    valid = np.zeros(geometry.shape, dtype=bool)
    z[0, 0], valid[0, 0] = start.item(), True
    for i in range(1, geometry.shape[0]):
        guess = z[i - 1 : i, :1] if valid[i - 1, 0] else np.array([[np.nan + 0j]])
        solved, ok, folded = _implicit_newton(model, profile, x1[i : i + 1, :1], x2[i : i + 1, :1], guess)
        _check_fold(folded, x1[i : i + 1, :1], x2[i : i + 1, :1])
        z[i, 0], valid[i, 0] = solved.item(), ok.item()
    for j in range(1, geometry.shape[1]):
        guess = np.where(valid[:, j - 1], z[:, j - 1], np.nan)
        solved, ok, folded = _implicit_newton(model, profile, x1[:, j], x2[:, j], guess)
        _check_fold(folded, x1[:, j], x2[:, j])
        z[:, j], valid[:, j] = solved, ok

    masked = int((~valid).sum())
    if masked:
        logger.warning("implicit Burgers solve masked %d of %d nodes", masked, valid.size)

    derivatives = None
    if np.any(valid):
        zv = z[valid]
        slope = _relation_slope(model, profile, x1[valid], zv)
        z_x1 = np.full(z.shape, np.nan + 0j)
        z_x2 = np.full(z.shape, np.nan + 0j)
        z_x1[valid] = -_masked_characteristic_slope(model, zv) / slope
        z_x2[valid] = -1.0 / slope
        derivatives = (z_x1, z_x2)
    return ComplexField(z=np.where(valid, z, 1j), geometry=geometry, model=model, mask=valid, derivatives=derivatives)


def _check_fold(folded: NDArray, x1: NDArray, x2: NDArray) -> None:
    if np.any(folded):
        first = np.flatnonzero(folded.ravel())[0]
        raise ConvergenceError(
            "continuation breakdown: fold of the implicit relation",
            x=(float(x1.ravel()[first]), float(x2.ravel()[first])),
        )


def implicit_residual(zf: ComplexField, profile: AnalyticProfile) -> NDArray[np.float64]:
    """``|x2 + x1 phi(z) - C(z)|`` at valid nodes, ``nan`` elsewhere."""
    x1, x2 = zf.geometry.coordinates()
    out = np.full(zf.z.shape, np.nan)
    zv = zf.z[zf.mask]
    out[zf.mask] = np.abs(
        x2[zf.mask] + x1[zf.mask] * _masked_characteristic_slope(zf.model, zv) - profile.value(zv)
    )
    return out


# ---------------------------------------------------------------------------
# Heights from z fields
# ---------------------------------------------------------------------------


def plaquette_curl_density(slopes: NDArray, dx1: float, dx2: float) -> NDArray[np.float64]:
    """``|loop integral| / (dx1 dx2)`` of the trapezoid rule around every cell."""
    rho1, rho2 = slopes[..., 0], slopes[..., 1]
    bottom = 0.5 * dx1 * (rho1[:-1, :-1] + rho1[1:, :-1])
    right = 0.5 * dx2 * (rho2[1:, :-1] + rho2[1:, 1:])
    top = 0.5 * dx1 * (rho1[:-1, 1:] + rho1[1:, 1:])
    left = 0.5 * dx2 * (rho2[:-1, :-1] + rho2[:-1, 1:])
    return np.abs(bottom + right - top - left) / (dx1 * dx2)


def height_from_zfield(model: DimerModel, zf: ComplexField, h_origin: float = 0.0) -> HeightField:
    """Integrate the slope field of *zf* along the first row, then up every column.

    Raises:
        BranchError: If the field has masked nodes or breaks branch continuity.
        CurlError: If some plaquette's curl density exceeds ``1e-2``.
    """
    if not zf.complete:
        raise BranchError("cannot integrate a complex field with masked nodes")
    if not zf.branch_consistent:
        raise BranchError("complex field is not branch consistent")
    dx1, dx2 = zf.geometry.spacing
    slopes = ComplexField(zf.z, zf.geometry, model).slopes()
    curl = plaquette_curl_density(slopes, dx1, dx2)
    worst = float(curl.max())
    logger.debug("height_from_zfield: max plaquette curl density %.3e", worst)
    if worst > CURL_DENSITY_TOLERANCE:
        i, j = np.unravel_index(int(np.argmax(curl)), curl.shape)
        raise CurlError(
            "slope field of the complex field is not curl free",
            curl_density=worst,
            cell=(int(i), int(j)),
        )

    rho1, rho2 = slopes[..., 0], slopes[..., 1]
    values = np.empty(zf.geometry.shape)
    values[0, 0] = h_origin
    values[1:, 0] = h_origin + np.cumsum(0.5 * dx1 * (rho1[:-1, 0] + rho1[1:, 0]))
    values[:, 1:] = values[:, :1] + np.cumsum(0.5 * dx2 * (rho2[:, :-1] + rho2[:, 1:]), axis=1)
    return HeightField(values, zf.geometry, model.name)


# ---------------------------------------------------------------------------
# Slope-ratio report and slope-map identities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeRatioReport:
    """Result of the slope-ratio check; ``violations`` lists node indices."""

    checked: int
    violations: list[tuple[int, int]]
    max_deviation: float
    min_abs_imag: float

    @property
    def passed(self) -> bool:
        return not self.violations


def check_slope_ratio_nonreal(
    zf: ComplexField, tolerance: float = RATIO_TOLERANCE
) -> SlopeRatioReport:
    """Check ``z_x2 / z_x1 = w P_w / (z P_z)`` and that the ratio is not real.

    Uses the field's exact derivatives when it carries them, central
    differences otherwise. Nodes with ``|z_x1| <= 1e-10`` are skipped.
    """
    if zf.derivatives is not None:
        z_x1, z_x2 = zf.derivatives
    else:
        z_x1, z_x2 = grid_gradient(np.where(zf.mask, zf.z, np.nan), *zf.geometry.spacing)
    inner = np.zeros(zf.z.shape, dtype=bool)
    inner[1:-1, 1:-1] = True
    usable = inner & zf.mask & np.isfinite(z_x1) & np.isfinite(z_x2)
    usable &= np.abs(np.nan_to_num(z_x1)) > RATIO_DERIVATIVE_FLOOR
    if not np.any(usable):
        return SlopeRatioReport(checked=0, violations=[], max_deviation=0.0, min_abs_imag=np.inf)

    z = zf.z[usable]
    ratio = z_x2[usable] / z_x1[usable]
    expected = 1.0 / np.asarray(characteristic_slope(zf.model, z))
    deviation = np.abs(ratio - expected) / np.maximum(1.0, np.abs(expected))
    bad = (np.abs(ratio.imag) <= RATIO_IMAG_FLOOR) | (deviation >= tolerance)
    nodes = np.argwhere(usable)
    return SlopeRatioReport(
        checked=int(usable.sum()),
        violations=[(int(i), int(j)) for i, j in nodes[bad]],
        max_deviation=float(deviation.max()),
        min_abs_imag=float(np.abs(ratio.imag).min()),
    )


def _slope_partials(func: Callable[[NDArray], NDArray], points: NDArray, step: float) -> NDArray:
    """Central differences of ``func`` along ``rho1`` and ``rho2``; last axis is the direction."""
    offsets = np.eye(2) * step
    return np.stack([(func(points + e) - func(points - e)) / (2 * step) for e in offsets], axis=-1)


def idko_residual(model: DimerModel, rho: SlopeLike, step: float = 1e-5) -> Any:
    """``d log|z| / d rho2 - d log|w| / d rho1`` by central differences."""
    points = as_points(rho)
    partials = _slope_partials(lambda p: log_modulus_map(model, p), points, step)
    value = partials[..., 0, 1] - partials[..., 1, 0]
    return value.item() if np.ndim(value) == 0 else value


def id2_residuals(model: DimerModel, rho: SlopeLike, step: float = 1e-5) -> NDArray[np.complex128]:
    """The four log-modulus versus complex-log identities; shape ``(..., 4)``.

    Entries are the residuals of ``dlog|z|/drho1 = dlog z/drho1``,
    ``dlog|z|/drho2 = dlog z/drho2 - i pi``, ``dlog|w|/drho1 = dlog w/drho1 + i pi``
    and ``dlog|w|/drho2 = dlog w/drho2``.
    """
    points = as_points(rho)

    def complex_logs(p: NDArray) -> NDArray:
        z = np.asarray(z_from_slope(model, p))
        return np.stack([np.log(z), np.log(np.asarray(solve_w(model, z)))], axis=-1)

    modulus = _slope_partials(lambda p: log_modulus_map(model, p), points, step)
    logs = _slope_partials(complex_logs, points, step)
    return np.stack(
        [
            modulus[..., 0, 0] - logs[..., 0, 0],
            modulus[..., 0, 1] - (logs[..., 0, 1] - 1j * np.pi),
            modulus[..., 1, 0] - (logs[..., 1, 0] + 1j * np.pi),
            modulus[..., 1, 1] - logs[..., 1, 1],
        ],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# Variational minimiser
# ---------------------------------------------------------------------------


def _gradient_operators(geometry: GridGeometry) -> tuple[csr_matrix, csr_matrix]:
    """Sparse maps from node heights to the four corner-triangle gradients of every cell."""
    n1, n2 = geometry.shape
    dx1, dx2 = geometry.spacing
    index = np.arange(n1 * n2).reshape(n1, n2)
    a, b = index[:-1, :-1].ravel(), index[1:, :-1].ravel()
    c, d = index[:-1, 1:].ravel(), index[1:, 1:].ravel()
    cells = np.arange(a.size)
    rows = np.concatenate([4 * cells + corner for corner in range(4)] * 2)

    def assemble(plus: list[NDArray], minus: list[NDArray], step: float) -> csr_matrix:
        cols = np.concatenate(plus + minus)
        vals = np.concatenate([np.full(4 * cells.size, 1.0 / step), np.full(4 * cells.size, -1.0 / step)])
        return coo_matrix((vals, (rows, cols)), shape=(4 * cells.size, n1 * n2)).tocsr()

    return (
        assemble([b, b, d, d], [a, a, c, c], dx1),
        assemble([c, d, c, d], [a, b, a, b], dx2),
    )


def _triangle_slopes(operators: tuple[csr_matrix, csr_matrix], values: NDArray) -> NDArray:
    flat = np.asarray(values, dtype=float).ravel()
    return np.stack([operators[0] @ flat, operators[1] @ flat], axis=-1)


def _sigma_values(model: DimerModel, slopes: NDArray) -> NDArray:
    return np.concatenate(
        [np.atleast_1d(sigma_dual(model, slopes[k : k + SIGMA_CHUNK])) for k in range(0, len(slopes), SIGMA_CHUNK)]
    )


def surface_energy(model: DimerModel, h: HeightField, delta: float | None = None) -> float:
    """``sum_cells (dx1 dx2 / 4) sum_corners sigma(g_corner)``.

    Raises:
        OutsidePolygonError: If a triangle slope is not liquid with margin ``delta``.
    """
    delta = model.polygon.margin if delta is None else delta
    slopes = _triangle_slopes(_gradient_operators(h.geometry), h.values)
    if not np.all(is_liquid(model, slopes, delta)):
        raise OutsidePolygonError("triangle slope outside the liquid region")
    dx1, dx2 = h.geometry.spacing
    return float(0.25 * dx1 * dx2 * np.sum(_sigma_values(model, slopes)))


def surface_energy_gradient(model: DimerModel, h: HeightField) -> NDArray[np.float64]:
    """Gradient of :func:`surface_energy` with respect to every node height."""
    operators = _gradient_operators(h.geometry)
    slopes = _triangle_slopes(operators, h.values)
    b_star = sigma_gradient_dual(model, slopes)
    dx1, dx2 = h.geometry.spacing
    flat = 0.25 * dx1 * dx2 * (operators[0].T @ b_star[:, 0] + operators[1].T @ b_star[:, 1])
    return flat.reshape(h.geometry.shape)


def _energy_hessian(model: DimerModel, operators: tuple[csr_matrix, csr_matrix], values: NDArray, weight: float) -> csr_matrix:
    d1, d2 = operators
    sigma_matrix = sigma_hessian_dual(model, _triangle_slopes(operators, values))
    s11, s12, s22 = (diags(sigma_matrix[:, k, m]) for k, m in ((0, 0), (0, 1), (1, 1)))
    return (weight * (d1.T @ s11 @ d1 + d1.T @ s12 @ d2 + d2.T @ s12 @ d1 + d2.T @ s22 @ d2)).tocsr()


def coons_patch(values: NDArray) -> NDArray[np.float64]:
    """Transfinite interpolation of the ring values into the interior."""
    values = np.asarray(values, dtype=float)
    n1, n2 = values.shape
    s = np.linspace(0.0, 1.0, n1)[:, None]
    t = np.linspace(0.0, 1.0, n2)[None, :]
    left, right = values[:1, :], values[-1:, :]
    bottom, top = values[:, :1], values[:, -1:]
    corners = (
        (1 - s) * (1 - t) * values[0, 0]
        + s * (1 - t) * values[-1, 0]
        + (1 - s) * t * values[0, -1]
        + s * t * values[-1, -1]
    )
    return (1 - s) * left + s * right + (1 - t) * bottom + t * top - corners


def minimize_surface_tension(
    model: DimerModel,
    boundary: HeightField,
    delta: float | None = None,
    gradient_tolerance: float | None = None,
    max_iterations: int = 50,
    initial: HeightField | None = None,
) -> HeightField:
    """Minimise the discrete surface-tension functional with the ring of *boundary* fixed.

    Damped Newton on the interior nodes with the sparse Hessian
    ``G^T Sigma G``; the backtracking line search rejects any step that takes a
    triangle slope out of the margin-``delta`` liquid region. Converged when
    the interior gradient norm drops below ``gradient_tolerance`` (default
    ``1e-8`` times the number of interior nodes).

    Raises:
        OutsidePolygonError: If the initial extension of the boundary is not liquid.
        ConvergenceError: On line-search starvation or too many iterations.
    """
    delta = model.polygon.margin if delta is None else delta
    geometry = boundary.geometry
    ring = geometry.ring_mask()
    values = coons_patch(boundary.values) if initial is None else np.array(initial.values, dtype=float)
    values[ring] = boundary.values[ring]
    unknowns = np.flatnonzero(~ring.ravel())
    tolerance = 1e-8 * unknowns.size if gradient_tolerance is None else gradient_tolerance

    operators = _gradient_operators(geometry)
    dx1, dx2 = geometry.spacing
    weight = 0.25 * dx1 * dx2
    if not np.all(is_liquid(model, _triangle_slopes(operators, values), delta)):
        raise OutsidePolygonError("boundary data has no liquid extension on this grid")
    energy = surface_energy(model, HeightField(values, geometry), delta)

    for iteration in range(max_iterations):
        gradient = surface_energy_gradient(model, HeightField(values, geometry)).ravel()[unknowns]
        norm = float(np.linalg.norm(gradient))
        logger.debug("minimiser iteration %d: energy %.15e, |grad| %.3e", iteration, energy, norm)
        if norm < tolerance:
            logger.info("surface tension minimised in %d Newton steps", iteration)
            return HeightField(values, geometry, model.name)

        hessian = _energy_hessian(model, operators, values, weight)[unknowns][:, unknowns]
        step = spsolve(hessian.tocsc(), -gradient)
        slope_along = float(gradient @ step)
        scale = 1.0
        for _ in range(30):
            trial = values.copy()
            trial.ravel()[unknowns] += scale * step
            if np.all(is_liquid(model, _triangle_slopes(operators, trial), delta)):
                trial_energy = surface_energy(model, HeightField(trial, geometry), delta)
                if trial_energy <= energy + 1e-4 * scale * slope_along + 1e-13 * abs(energy):
                    break
            scale *= 0.5
        else:
            raise ConvergenceError("minimiser line search starved", iteration=iteration, gradient=norm)
        values, energy = trial, trial_energy

    raise ConvergenceError(
        f"minimiser did not converge in {max_iterations} iterations", gradient=norm
    )


__all__ = [
    "AnalyticProfile",
    "ComplexField",
    "GridGeometry",
    "HeightField",
    "ResidualField",
    "SlopeRatioReport",
    "burgers_residual",
    "characteristic_slope",
    "check_slope_ratio_nonreal",
    "coons_patch",
    "el_residual",
    "height_from_zfield",
    "id2_residuals",
    "idko_residual",
    "implicit_residual",
    "minimize_surface_tension",
    "plaquette_curl_density",
    "profile_from_preset",
    "solve_burgers_implicit",
    "surface_energy",
    "surface_energy_gradient",
]
