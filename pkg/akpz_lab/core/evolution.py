"""Growth of height profiles under ``h_t = v(grad h)`` and the dynamic identities.

Two solvers are provided. :class:`CharacteristicBundle` transports slopes
along the straight lines ``x(t) = x0 - t Dv(rho0)`` and resamples onto the
original grid by solving for foot points; :func:`evolve_viscous` steps
``h_t = v(grad h) + nu Lap h`` explicitly with Dirichlet data on the ring
taken from the characteristic solution.

The remaining functions evaluate the quantities tracked along a run: the
obstruction value ``R`` at a probe node, the time rates of ``log z`` and
``log w`` and the rate of the Burgers residual ``Delta``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import RectBivariateSpline

from akpz_lab.core.dimer_lattice import (
    DimerModel,
    eval_P_derivatives,
    is_liquid,
    slope_from_z,
    solve_w,
    z_from_slope,
)
from akpz_lab.core.growth_speed import (
    SpeedFunction,
    SpeedKind,
    f_gradient,
    laplacian_f,
    obstruction,
    speed_eval,
    speed_gradient,
    speed_hessian,
)
from akpz_lab.core.shapes import (
    ComplexField,
    GridGeometry,
    HeightField,
    burgers_residual,
    el_residual,
)
from akpz_lab.core.surface_tension import sigma_hessian_dual
from akpz_lab.exceptions import (
    CflError,
    ConvergenceError,
    CrossingError,
    OutsidePolygonError,
    ValidationError,
)
from akpz_lab.utils.finite_diff import grid_gradient, grid_hessian

logger = logging.getLogger(__name__)

FOOT_TOLERANCE = 1e-13
FOOT_NOISE_FLOOR = 1e-8
FOOT_MAX_ITER = 200
SPEED_GRADIENT_STEP = 1e-5
LOG_W_STEP = 1e-6
HORIZON_FACTOR = 0.5
HORIZON_CAP = 0.8
DEFAULT_NU_FACTOR = 4.0


# ---------------------------------------------------------------------------
# Smooth profile
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothProfile:
    """Spline representation of a height field, extended past the grid by its quadratic Taylor polynomial."""

    spline: RectBivariateSpline
    extent: tuple[float, float, float, float]

    @classmethod
    def from_height(cls, h: HeightField, interpolation: str = "cubic") -> "SmoothProfile":
        degree = {"cubic": 3, "linear": 1}.get(interpolation)
        if degree is None:
            raise ValidationError(f"unknown interpolation {interpolation!r} (cubic or linear)")
        axis1, axis2 = h.geometry.axes()
        return cls(RectBivariateSpline(axis1, axis2, h.values, kx=degree, ky=degree), h.geometry.extent)

    def evaluate(self, points: ArrayLike) -> tuple[NDArray, NDArray, NDArray]:
        """Return value, gradient ``(..., 2)`` and Hessian ``(..., 2, 2)`` at *points*."""
        points = np.asarray(points, dtype=float)
        x1min, x1max, x2min, x2max = self.extent
        p1 = np.clip(points[..., 0], x1min, x1max)
        p2 = np.clip(points[..., 1], x2min, x2max)
        d1, d2 = points[..., 0] - p1, points[..., 1] - p2

        ev = self.spline.ev
        f = ev(p1, p2)
        g1, g2 = ev(p1, p2, dx=1), ev(p1, p2, dy=1)
        h11, h12, h22 = ev(p1, p2, dx=2), ev(p1, p2, dx=1, dy=1), ev(p1, p2, dy=2)

        value = f + g1 * d1 + g2 * d2 + 0.5 * (h11 * d1**2 + 2 * h12 * d1 * d2 + h22 * d2**2)
        gradient = np.stack([g1 + h11 * d1 + h12 * d2, g2 + h12 * d1 + h22 * d2], axis=-1)
        hessian = np.stack(
            [np.stack([h11, h12], axis=-1), np.stack([h12, h22], axis=-1)], axis=-2
        )
        return value, gradient, hessian


# ---------------------------------------------------------------------------
# Characteristics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CharacteristicBundle:
    """Characteristic lines started at every node of a height field.

    Attributes:
        foot_points: Start points ``x0``; shape ``(n1, n2, 2)``.
        slopes: Transported slopes ``rho0 = grad h0(x0)``.
        speeds: ``v(rho0)``.
        speed_gradients: ``Dv(rho0)``.
        horizon: ``T_max = 0.5 / max spectral radius of D^2v(rho0) D^2h0(x0)``.
    """

    foot_points: NDArray[np.float64]
    slopes: NDArray[np.float64]
    speeds: NDArray[np.float64]
    speed_gradients: NDArray[np.float64]
    horizon: float
    speed: SpeedFunction = field(repr=False)
    profile: SmoothProfile = field(repr=False)
    geometry: GridGeometry = field(repr=False)
    crossing_matrices: NDArray[np.float64] = field(repr=False, default=None)

    @classmethod
    def from_height(
        cls,
        h0: HeightField,
        v: SpeedFunction,
        interpolation: str = "cubic",
        delta: float | None = None,
    ) -> "CharacteristicBundle":
        """Start a characteristic at every node of *h0*.

        Raises:
            OutsidePolygonError: If a node slope is not liquid with margin ``delta``.
        """
        delta = v.model.polygon.margin if delta is None else delta
        profile = SmoothProfile.from_height(h0, interpolation)
        x1, x2 = h0.geometry.coordinates()
        nodes = np.stack([x1, x2], axis=-1)
        _, slopes, hess_h = profile.evaluate(nodes)
        liquid = np.asarray(is_liquid(v.model, slopes, delta), dtype=bool)
        if not np.all(liquid):
            i, j = np.argwhere(~liquid)[0]
            raise OutsidePolygonError(
                "initial profile has a non-liquid slope", node=(int(i), int(j)), slope=slopes[i, j]
            )

        hess_v = speed_hessian(v, slopes, step=min(1e-3, delta / 4.0), delta=delta)
        products = hess_v @ hess_h
        radius = float(np.max(np.abs(np.linalg.eigvals(products))))
        horizon = HORIZON_FACTOR / radius if radius > 0 else math.inf
        logger.debug("characteristic horizon T_max = %.6g", horizon)
        return cls(
            foot_points=nodes,
            slopes=slopes,
            speeds=np.asarray(speed_eval(v, slopes), dtype=float),
            speed_gradients=speed_gradient(v, slopes, SPEED_GRADIENT_STEP),
            horizon=horizon,
            speed=v,
            profile=profile,
            geometry=h0.geometry,
            crossing_matrices=products,
        )

    def positions(self, t: float) -> NDArray[np.float64]:
        """``x(t) = x0 - t Dv(rho0)`` for every line."""
        return self.foot_points - t * self.speed_gradients

    def check_crossing(self, t: float) -> None:
        """Raise :class:`CrossingError` unless ``det(I - t D^2v D^2h0) > 0`` at every node."""
        jacobian = np.eye(2) - t * self.crossing_matrices
        det = np.linalg.det(jacobian)
        if np.any(det <= 0):
            i, j = np.unravel_index(int(np.argmin(det)), det.shape)
            raise CrossingError(
                f"characteristics cross before t = {t}",
                t=t,
                node=(int(i), int(j)),
                determinant=float(det[i, j]),
                horizon=self.horizon,
            )

    def trace_back(self, points: ArrayLike, t: float) -> tuple[NDArray, NDArray]:
        """Foot points and transported slopes of the lines through *points* at time *t*.

        Solves ``x0 = y + t Dv(grad h0(x0))`` by fixed-point iteration. The
        iteration also stops once the update stalls below ``FOOT_NOISE_FLOOR``,
        the level set by the finite-difference speed gradient.
        """
        targets = np.asarray(points, dtype=float)
        x0 = targets.copy()
        scale = 1.0 + float(np.max(np.abs(targets))) if targets.size else 1.0
        previous = math.inf
        for iteration in range(FOOT_MAX_ITER):
            _, rho, _ = self.profile.evaluate(x0)
            updated = targets + t * speed_gradient(self.speed, rho, SPEED_GRADIENT_STEP)
            change = float(np.max(np.abs(updated - x0))) if targets.size else 0.0
            x0 = updated
            stalled = change < FOOT_NOISE_FLOOR * scale and change >= 0.5 * previous
            previous = change
            if change < FOOT_TOLERANCE * scale or stalled:
                logger.debug("foot points converged after %d iterations", iteration)
                _, rho, _ = self.profile.evaluate(x0)
                return x0, rho
        raise ConvergenceError("foot-point iteration did not converge", t=t, change=change)

    def heights_at(self, points: ArrayLike, t: float) -> tuple[NDArray, NDArray]:
        """Heights ``h0(x0) + t (v - rho0 . Dv)`` at *points* and the slopes they carry."""
        x0, rho = self.trace_back(points, t)
        value, _, _ = self.profile.evaluate(x0)
        dv = speed_gradient(self.speed, rho, SPEED_GRADIENT_STEP)
        heights = value + t * (np.asarray(speed_eval(self.speed, rho)) - np.sum(rho * dv, axis=-1))
        return heights, rho

    def height_field(self, t: float) -> HeightField:
        """Heights at time *t* on the original grid."""
        if t < 0:
            raise ValidationError(f"time must be non-negative, got {t}")
        self.check_crossing(t)
        x1, x2 = self.geometry.coordinates()
        heights, _ = self.heights_at(np.stack([x1, x2], axis=-1), t)
        return HeightField(heights, self.geometry, self.speed.model.name)

    def foot_slopes(self, t: float) -> NDArray[np.float64]:
        """Slopes carried to every grid node at time *t*; shape ``(n1, n2, 2)``."""
        x1, x2 = self.geometry.coordinates()
        return self.trace_back(np.stack([x1, x2], axis=-1), t)[1]


def evolve_characteristics(
    h0: HeightField,
    v: SpeedFunction,
    t: float,
    interpolation: str = "cubic",
    bundle: CharacteristicBundle | None = None,
) -> HeightField:
    """Solve ``h_t = v(grad h)`` up to time *t* by characteristics.

    Raises:
        CrossingError: If the forward map loses positivity before *t*.
    """
    bundle = bundle or CharacteristicBundle.from_height(h0, v, interpolation)
    if t > bundle.horizon:
        logger.warning("t = %.6g exceeds the crossing horizon %.6g", t, bundle.horizon)
    return bundle.height_field(t)


def transport_defect(bundle: CharacteristicBundle, h_t: HeightField, t: float) -> float:
    """Max interior ``|grad h_t - rho0|`` where ``rho0`` is the slope carried to each node."""
    carried = bundle.foot_slopes(t)
    measured = h_t.interior_slopes()
    gap = np.linalg.norm(measured - carried, axis=-1)
    return float(np.nanmax(gap[1:-1, 1:-1]))


# ---------------------------------------------------------------------------
# Vanishing viscosity
# ---------------------------------------------------------------------------


def cfl_bound(nu: float, dx: float, max_dv: float) -> float:
    """``min(dx^2 / (4 nu), dx / (2 max|Dv|), 2 nu / max|Dv|^2)`` over the terms that apply."""
    bounds = [math.inf]
    if nu > 0:
        bounds.append(dx**2 / (4.0 * nu))
    if max_dv > 0:
        bounds.append(dx / (2.0 * max_dv))
        if nu > 0:
            bounds.append(2.0 * nu / max_dv**2)
    return min(bounds)


def _five_point_laplacian(values: NDArray, dx1: float, dx2: float) -> NDArray:
    centre = values[1:-1, 1:-1]
    return (values[2:, 1:-1] - 2 * centre + values[:-2, 1:-1]) / dx1**2 + (
        values[1:-1, 2:] - 2 * centre + values[1:-1, :-2]
    ) / dx2**2


def max_speed_gradient(h: HeightField, v: SpeedFunction) -> float:
    """``max |Dv(grad h)|`` over interior nodes."""
    slopes = h.interior_slopes()[1:-1, 1:-1]
    return float(np.max(np.linalg.norm(speed_gradient(v, slopes, SPEED_GRADIENT_STEP), axis=-1)))


def evolve_viscous(
    h0: HeightField,
    v: SpeedFunction,
    nu: float,
    dt: float,
    T: float,
    delta: float | None = None,
    boundary: Callable[[float], NDArray] | None = None,
    t0: float = 0.0,
) -> HeightField:
    """Forward-Euler steps of ``h_t = v(grad h) + nu Lap h`` from ``t0`` to ``t0 + T``.

    ``boundary(t)`` returns the ring values (in ``ring_mask`` order) at
    absolute time ``t``; by default they come from the characteristic
    solution started at *h0*. The step is shortened so that a whole number
    of steps reaches ``T``.

    Raises:
        CflError: If ``dt`` exceeds :func:`cfl_bound`.
        OutsidePolygonError: If a slope leaves the margin-``delta`` liquid region.
    """
    if nu < 0 or dt <= 0 or T < 0:
        raise ValidationError(f"need nu >= 0, dt > 0 and T >= 0, got nu={nu}, dt={dt}, T={T}")
    delta = v.model.polygon.margin if delta is None else delta
    geometry = h0.geometry
    dx1, dx2 = geometry.spacing
    bound = cfl_bound(nu, min(dx1, dx2), max_speed_gradient(h0, v))
    if dt > bound * (1.0 + 1e-12):
        raise CflError(f"time step {dt:.3e} exceeds the stability bound {bound:.3e}", dt=dt, bound=bound)

    ring = geometry.ring_mask()
    if boundary is None:
        bundle = CharacteristicBundle.from_height(h0, v, delta=delta)
        x1, x2 = geometry.coordinates()
        ring_points = np.stack([x1[ring], x2[ring]], axis=-1)

        def boundary(t: float) -> NDArray:
            return bundle.heights_at(ring_points, t - t0)[0]

    steps = max(1, math.ceil(T / dt - 1e-12)) if T > 0 else 0
    tau = T / steps if steps else 0.0
    values = np.array(h0.values, dtype=float)
    for step in range(steps):
        slopes = np.stack(grid_gradient(values, dx1, dx2), axis=-1)[1:-1, 1:-1]
        liquid = np.asarray(is_liquid(v.model, slopes, delta), dtype=bool)
        if not np.all(liquid):
            i, j = np.argwhere(~liquid)[0]
            raise OutsidePolygonError(
                "viscous solution left the liquid region",
                step=step,
                node=(int(i) + 1, int(j) + 1),
                slope=slopes[i, j],
            )
        values[1:-1, 1:-1] += tau * (
            np.asarray(speed_eval(v, slopes)) + nu * _five_point_laplacian(values, dx1, dx2)
        )
        values[ring] = boundary(t0 + (step + 1) * tau)
    logger.debug("viscous solver: %d steps of %.3e (nu = %.3e)", steps, tau, nu)
    return HeightField(values, geometry, h0.model_name)


# ---------------------------------------------------------------------------
# Probes and rates
# ---------------------------------------------------------------------------


def R_probe(h: HeightField, v: SpeedFunction, model: DimerModel, node: tuple[int, int]) -> float:  # noqa: N802
    """Obstruction value ``sum D^2v_lk A_lk`` with ``A = D^2h Sigma D^2h`` at an interior node."""
    i, j = node
    n1, n2 = h.geometry.shape
    if not (0 < i < n1 - 1 and 0 < j < n2 - 1):
        raise ValidationError(f"probe node {node} is not interior")
    slope = h.interior_slopes()[i, j]
    if not is_liquid(model, slope, model.polygon.margin):
        raise OutsidePolygonError("probe slope is not liquid", node=node, slope=slope)
    h11, h12, h22 = (d[i, j] for d in grid_hessian(h.values, *h.geometry.spacing))
    hess_h = np.array([[h11, h12], [h12, h22]])
    hess_v = speed_hessian(v, slope)
    return float(obstruction(sigma_hessian_dual(model, slope), hess_h, hess_v))


def _on_valid(func: Callable[[NDArray], Any], z: NDArray, dtype: type = complex) -> NDArray:
    out = np.full(z.shape, np.nan, dtype=dtype)
    valid = np.isfinite(z)
    if np.any(valid):
        out[valid] = func(z[valid])
    return out


def _log_w_slope_derivatives(model: DimerModel, z: NDArray) -> tuple[NDArray, NDArray]:
    """Central differences of ``rho -> log w(z(rho))`` at the slopes of *z*."""

    def log_w(points: NDArray) -> NDArray:
        return np.log(np.asarray(solve_w(model, np.asarray(z_from_slope(model, points)))))

    def partials(zv: NDArray) -> NDArray:
        rho = slope_from_z(model, zv).as_array()
        offsets = np.eye(2) * LOG_W_STEP
        return np.stack(
            [(log_w(rho + e) - log_w(rho - e)) / (2 * LOG_W_STEP) for e in offsets], axis=-1
        )

    out = np.full((*z.shape, 2), np.nan + 0j)
    valid = np.isfinite(z)
    if np.any(valid):
        out[valid] = partials(z[valid])
    return out[..., 0], out[..., 1]


@dataclass(frozen=True)
class _RateTerms:
    z: NDArray
    w: NDArray
    z_x1: NDArray
    z_x2: NDArray
    delta: NDArray
    f_z: NDArray
    a: NDArray
    b: NDArray


def _rate_terms(zf: ComplexField, v: SpeedFunction, model: DimerModel) -> _RateTerms:
    if v.kind is not SpeedKind.Z:
        raise ValidationError(f"speed {v.name!r} is slope-native; rates need a z-composed speed")
    z = np.where(zf.mask, zf.z, np.nan)
    w = zf.w()
    z_x1, z_x2 = grid_gradient(z, *zf.geometry.spacing)
    delta = burgers_residual(zf, model)

    f_re = _on_valid(lambda zv: f_gradient(v, zv)[0], z, float)
    f_im = _on_valid(lambda zv: f_gradient(v, zv)[1], z, float)
    f_z = 0.5 * (f_re - 1j * f_im)

    def z_prime_of_w(zv: NDArray) -> NDArray:
        p_z, p_w = eval_P_derivatives(model, zv, solve_w(model, zv))
        return -np.asarray(p_w) / np.asarray(p_z)

    z_w = _on_valid(z_prime_of_w, z)
    log_w_1, log_w_2 = _log_w_slope_derivatives(model, z)
    common = delta / z * z_w
    x_a, x_b = common * log_w_1, common * log_w_2
    a = f_re * x_a.real + f_im * x_a.imag
    b = f_re * x_b.real + f_im * x_b.imag
    return _RateTerms(z=z, w=w, z_x1=z_x1, z_x2=z_x2, delta=delta, f_z=f_z, a=a, b=b)


def log_rates(zf: ComplexField, v: SpeedFunction, model: DimerModel) -> tuple[NDArray, NDArray]:
    """``(d/dt log z, d/dt log w)`` with ``2 i pi z_x2 f_z + a`` and ``-2 i pi z_x1 f_z + b``."""
    terms = _rate_terms(zf, v, model)
    return (
        2j * np.pi * terms.z_x2 * terms.f_z + terms.a,
        -2j * np.pi * terms.z_x1 * terms.f_z + terms.b,
    )


def delta_rate(zf: ComplexField, v: SpeedFunction, model: DimerModel) -> NDArray[np.complex128]:
    """Time derivative of ``Delta`` under ``h_t = f(z)``, node by node.

    ``(a + b) Delta + w z (a_x1 + b_x2) + 2 i pi (z_x2 - z_x1) Delta f_z
    - pi z w (Im z_x2 Re z_x1 - Re z_x2 Im z_x1) Lap f``; ``nan`` where a
    stencil is incomplete.
    """
    t = _rate_terms(zf, v, model)
    a_x1, _ = grid_gradient(t.a, *zf.geometry.spacing)
    _, b_x2 = grid_gradient(t.b, *zf.geometry.spacing)
    laplacian = _on_valid(lambda zv: np.asarray(laplacian_f(v, zv)), t.z, float)
    bracket = t.z_x2.imag * t.z_x1.real - t.z_x2.real * t.z_x1.imag
    return (
        (t.a + t.b) * t.delta
        + t.w * t.z * (a_x1 + b_x2)
        + 2j * np.pi * (t.z_x2 - t.z_x1) * t.delta * t.f_z
        - np.pi * t.z * t.w * bracket * laplacian
    )


def complex_field_of(h: HeightField, model: DimerModel) -> ComplexField:
    """``z(grad h)`` at interior nodes; the ring is masked."""
    mask = ~h.geometry.ring_mask()
    z = np.full(h.geometry.shape, 1j)
    z[mask] = z_from_slope(model, h.interior_slopes()[mask])
    return ComplexField(z, h.geometry, model, mask=mask)


def delta_of(h: HeightField, model: DimerModel) -> NDArray[np.complex128]:
    """Burgers residual of ``z(grad h)``."""
    return burgers_residual(complex_field_of(h, model), model)


def delta_time_derivative(
    bundle: CharacteristicBundle, model: DimerModel, t: float, node: tuple[int, int], step: float = 1e-3
) -> complex:
    """Central difference in time of ``Delta`` at *node* along the characteristic solution."""
    early = delta_of(bundle.height_field(max(t - step, 0.0)), model)[node]
    late = delta_of(bundle.height_field(t + step), model)[node]
    return complex((late - early) / (t + step - max(t - step, 0.0)))


# ---------------------------------------------------------------------------
# Preservation runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvolutionTrace:
    """Residuals recorded at the output times of a run."""

    times: list[float]
    max_el: list[float]
    max_delta: list[float]
    r_probe: list[float]
    ddelta_probe: list[complex]
    solver: str = "char"
    horizon: float = math.inf
    capped: bool = False
    snapshots: dict[float, HeightField] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        """Check the times start at zero and increase."""
        if self.times and (self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0)):
            raise ValidationError("trace times must increase strictly from 0")

    def rows(self) -> list[list[float]]:
        """``t, max_EL, max_Delta, R_probe, dDelta_probe_re, dDelta_probe_im`` per time."""
        return [
            [t, el, d, r, rate.real, rate.imag]
            for t, el, d, r, rate in zip(
                self.times, self.max_el, self.max_delta, self.r_probe, self.ddelta_probe
            )
        ]


@dataclass(frozen=True)
class PreservationRun:
    """Everything a preservation run needs."""

    model: DimerModel
    speed: SpeedFunction
    initial: HeightField
    T: float
    outputs: int = 4
    solver: str = "char"
    nu: float | None = None
    dt: float | None = None
    probe: tuple[int, int] | None = None
    interpolation: str = "cubic"
    keep_snapshots: bool = False

    def __post_init__(self) -> None:
        """Validate the solver name and counts."""
        if self.solver not in {"char", "viscous"}:
            raise ValidationError(f"unknown solver {self.solver!r} (char or viscous)")
        if self.outputs < 1 or self.T < 0:
            raise ValidationError("need at least one output time and T >= 0")


def default_viscosity(geometry: GridGeometry) -> float:
    return DEFAULT_NU_FACTOR * min(geometry.spacing) ** 2


def capped_time(T: float, horizon: float) -> tuple[float, bool]:
    """``min(T, 0.8 T_max)`` and whether the cap binds."""
    cap = HORIZON_CAP * horizon
    return (cap, True) if T > cap else (T, False)


def run_preservation_experiment(run: PreservationRun) -> EvolutionTrace:
    """Evolve, recording ``max |L[h]|``, ``max |Delta|``, ``R`` and ``d/dt Delta`` at the probe.

    ``d/dt Delta`` is only defined for z-composed speeds; slope-native speeds record ``nan``.
    """
    h0, v, model = run.initial, run.speed, run.model
    bundle = CharacteristicBundle.from_height(h0, v, run.interpolation)
    T, capped = capped_time(run.T, bundle.horizon)
    if capped:
        logger.warning(
            "T = %.6g capped to %.6g (0.8 x crossing horizon %.6g)", run.T, T, bundle.horizon
        )
    times = [float(t) for t in np.linspace(0.0, T, run.outputs + 1)] if T > 0 else [0.0]
    probe = run.probe or h0.geometry.centre_index()

    nu = run.nu if run.nu is not None else default_viscosity(h0.geometry)
    dt = run.dt
    if run.solver == "viscous" and dt is None:
        dx = min(h0.geometry.spacing)
        dt = 0.5 * cfl_bound(nu, dx, max_speed_gradient(h0, v))

    trace = EvolutionTrace(
        times=times, max_el=[], max_delta=[], r_probe=[], ddelta_probe=[],
        solver=run.solver, horizon=bundle.horizon, capped=capped,
    )
    current, previous_time = h0, 0.0
    for t in times:
        if run.solver == "char":
            current = bundle.height_field(t) if t > 0 else h0
        elif t > previous_time:
            current = evolve_viscous(current, v, nu, dt, t - previous_time, t0=previous_time,
                                     boundary=_ring_from_bundle(bundle))
        previous_time = t
        residual = el_residual(current, model)
        zf = complex_field_of(current, model)
        trace.max_el.append(residual.max_el())
        trace.max_delta.append(float(np.nanmax(np.abs(burgers_residual(zf, model)))))
        trace.r_probe.append(R_probe(current, v, model, probe))
        if v.kind is SpeedKind.Z:
            trace.ddelta_probe.append(complex(delta_rate(zf, v, model)[probe]))
        else:
            trace.ddelta_probe.append(complex(math.nan, math.nan))
        if run.keep_snapshots:
            trace.snapshots[t] = current
        logger.info(
            "t = %.4g: max|L| = %.3e, max|Delta| = %.3e", t, trace.max_el[-1], trace.max_delta[-1]
        )
    return trace


def _ring_from_bundle(bundle: CharacteristicBundle) -> Callable[[float], NDArray]:
    ring = bundle.geometry.ring_mask()
    x1, x2 = bundle.geometry.coordinates()
    points = np.stack([x1[ring], x2[ring]], axis=-1)
    return lambda t: bundle.heights_at(points, t)[0]


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Errors at successively halved spacings.

    ``constant`` is the second-order constant ``C`` observed at the coarsest
    spacing; :meth:`tolerance` returns ``10 C dx^2``.
    """

    spacings: list[float]
    errors: list[float]
    ratios: list[float]
    orders: list[float]
    constant: float

    def tolerance(self, dx: float) -> float:
        return 10.0 * self.constant * dx**2

    def ratio_close_to(self, target: float = 4.0, rel: float = 0.3) -> bool:
        return all(abs(r - target) <= rel * target for r in self.ratios)

    def orders_within(self, low: float, high: float) -> bool:
        return all(low <= order <= high for order in self.orders)


def convergence_study(spacings: Sequence[float], errors: Sequence[float]) -> ConvergenceReport:
    """Observed ratios and orders of *errors* measured at decreasing *spacings*."""
    if len(spacings) != len(errors) or len(errors) < 2:
        raise ValidationError("a convergence study needs at least two matching resolutions")
    ratios = [float(e0 / e1) if e1 > 0 else math.inf for e0, e1 in zip(errors, errors[1:])]
    orders = [
        float(math.log(r) / math.log(d0 / d1)) if r > 0 and math.isfinite(r) else math.inf
        for r, d0, d1 in zip(ratios, spacings, spacings[1:])
    ]
    constant = float(errors[0] / spacings[0] ** 2)
    return ConvergenceReport(
        spacings=[float(s) for s in spacings],
        errors=[float(e) for e in errors],
        ratios=ratios,
        orders=orders,
        constant=constant,
    )


__all__ = [
    "CharacteristicBundle",
    "ConvergenceReport",
    "EvolutionTrace",
    "PreservationRun",
    "R_probe",
    "SmoothProfile",
    "capped_time",
    "cfl_bound",
    "complex_field_of",
    "convergence_study",
    "default_viscosity",
    "delta_of",
    "delta_rate",
    "delta_time_derivative",
    "evolve_characteristics",
    "evolve_viscous",
    "log_rates",
    "max_speed_gradient",
    "run_preservation_experiment",
    "transport_defect",
]
