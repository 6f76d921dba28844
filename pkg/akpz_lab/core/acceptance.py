"""Property-based acceptance suite behind ``akpz-lab accept``.

Each check returns a :class:`CheckResult`; numerical failures inside a check
mark it FAIL instead of aborting the suite. Tolerances for the grid
experiments are calibrated from two resolutions: ``eps = 10 C dx^2`` with
``C`` observed on the coarse grid.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from akpz_lab.core.dimer_lattice import (
    DEFAULT_MARGIN,
    HONEYCOMB,
    SQUARE,
    random_liquid_slopes,
    slope_from_z,
    z_from_slope,
)
from akpz_lab.core.evolution import (
    HORIZON_CAP,
    CharacteristicBundle,
    ConvergenceReport,
    EvolutionTrace,
    PreservationRun,
    complex_field_of,
    convergence_study,
    delta_rate,
    delta_time_derivative,
    run_preservation_experiment,
)
from akpz_lab.core.growth_speed import AkpzLabel, SpeedFunction, akpz_map, speed_from_preset
from akpz_lab.core.runner import ParallelRunner
from akpz_lab.core.shapes import (
    ComplexField,
    GridGeometry,
    HeightField,
    el_residual,
    height_from_zfield,
    id2_residuals,
    idko_residual,
    profile_from_preset,
    solve_burgers_implicit,
)
from akpz_lab.core.surface_tension import sigma_hessian
from akpz_lab.exceptions import AkpzLabError

logger = logging.getLogger(__name__)

BURGERS_EXTENT = (0.5, 1.5, -0.5, 0.5)
ROUND_TRIP_TOLERANCE = 1e-8
ANCHOR_TOLERANCE = 1e-12
ORACLE_TOLERANCE = 1e-3
IDENTITY_TOLERANCE = 1e-5
IDENTITY_MARGIN = 0.05
ORDER_RANGE = (1.7, 2.3)
RATE_AGREEMENT = 0.1
FALSIFIER_FACTOR = 1e3
CONTRACTION_MIN = 3.0
CONSISTENCY_T = 0.02
CONSISTENCY_NU_FACTOR = 4.0
CONSISTENCY_DT_FACTOR = 1.0 / 32.0


@dataclass(frozen=True)
class SuiteSizes:
    """Sample counts and grid sizes of one suite run."""

    round_trips: int = 1000
    convexity_samples: int = 100
    legendre_samples: int = 10
    identity_samples: int = 100
    grids: tuple[int, int] = (33, 65)
    map_resolution: int = 50
    consistency_grids: tuple[int, int] = (33, 65)


FULL = SuiteSizes()
QUICK = SuiteSizes(
    round_trips=200,
    convexity_samples=20,
    legendre_samples=3,
    identity_samples=20,
    grids=(17, 33),
    map_resolution=20,
    consistency_grids=(17, 33),
)


@dataclass
class CheckResult:
    """Verdict of one acceptance check."""

    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    metrics: dict[str, Any] = field(default_factory=dict)


def lozenge_hessian(rho: np.ndarray) -> np.ndarray:
    """Closed-form honeycomb ``Sigma``: ``pi (cot a + cot c, cot c; cot c, cot b + cot c)``."""
    rho = np.asarray(rho, dtype=float)
    c1, c2 = 1.0 / np.tan(np.pi * rho[..., 0]), 1.0 / np.tan(np.pi * rho[..., 1])
    c3 = 1.0 / np.tan(np.pi * (1.0 - rho[..., 0] - rho[..., 1]))
    return np.pi * np.stack(
        [np.stack([c1 + c3, c3], axis=-1), np.stack([c3, c2 + c3], axis=-1)], axis=-2
    )


def _epsilon(report: ConvergenceReport) -> float:
    """``10 C dx^2`` at the finest spacing."""
    return report.tolerance(report.spacings[-1])


@dataclass
class _HarmonicRun:
    h0: HeightField
    zf: ComplexField
    trace: EvolutionTrace
    bundle: CharacteristicBundle


class AcceptanceSuite:
    """The nine acceptance checks, run in order."""

    def __init__(self, runner: ParallelRunner | None = None, quick: bool = False) -> None:
        """Initialize the suite.

        Args:
            runner: Supplies the thread pool and the spinner.
            quick: Use smaller samples and grids.
        """
        self.runner = runner or ParallelRunner()
        self.sizes = QUICK if quick else FULL
        self._shapes: dict[int, tuple[ComplexField, HeightField]] = {}
        self._harmonic: dict[int, _HarmonicRun] = {}
        self._harmonic_reports: dict[str, ConvergenceReport] = {}

    @property
    def checks(self) -> list[tuple[str, Callable[[], CheckResult]]]:
        return [
            ("bijection", self.check_bijection),
            ("convexity", self.check_convexity),
            ("identities", self.check_identities),
            ("el-burgers", self.check_el_burgers),
            ("preservation", self.check_preservation),
            ("probe", self.check_probe),
            ("falsifier", self.check_falsifier),
            ("akpz-signature", self.check_akpz_signature),
            ("consistency", self.check_consistency),
        ]

    def run(self) -> list[CheckResult]:
        """Run every check; exceptions turn into FAIL rows."""
        results = []
        checks = self.checks
        for index, (name, check) in enumerate(checks, start=1):
            start = time.perf_counter()
            try:
                result = self.runner.run(f"[{index}/{len(checks)}] {name}", check)
            except AkpzLabError as exc:
                logger.debug("check %s raised", name, exc_info=True)
                result = CheckResult(
                    name, False, f"{type(exc).__name__}: {exc.message}", metrics=exc.to_dict()["details"]
                )
            result.seconds = time.perf_counter() - start
            results.append(result)
        return results

    # ------------------------------------------------------------------
    # Shared fixtures
    # ------------------------------------------------------------------

    def burgers_shape(self, n: int) -> tuple[ComplexField, HeightField]:
        """``C = i`` implicit solution and its heights on an ``n x n`` honeycomb grid."""
        if n not in self._shapes:
            geometry = GridGeometry.from_extent(BURGERS_EXTENT, (n, n))
            zf = solve_burgers_implicit(HONEYCOMB, profile_from_preset("const-i"), geometry)
            self._shapes[n] = (zf, height_from_zfield(HONEYCOMB, zf))
        return self._shapes[n]

    def harmonic_run(self, n: int) -> _HarmonicRun:
        """The ``f = Im z`` characteristic run up to ``0.8 T_max``."""
        if n not in self._harmonic:
            zf, h0 = self.burgers_shape(n)
            v = speed_from_preset("im-z", HONEYCOMB)
            bundle = CharacteristicBundle.from_height(h0, v)
            T = HORIZON_CAP * bundle.horizon if math.isfinite(bundle.horizon) else 0.1
            trace = run_preservation_experiment(PreservationRun(HONEYCOMB, v, h0, T, outputs=4))
            self._harmonic[n] = _HarmonicRun(h0, zf, trace, bundle)
        return self._harmonic[n]

    def harmonic_reports(self) -> dict[str, ConvergenceReport]:
        """Convergence of the harmonic-run maxima over the two suite grids."""
        if not self._harmonic_reports:
            runs = [self.harmonic_run(n) for n in self.sizes.grids]
            spacings = [run.h0.geometry.spacing[0] for run in runs]
            metrics = {
                "el": [max(run.trace.max_el) for run in runs],
                "delta": [max(run.trace.max_delta) for run in runs],
                "r": [max(abs(r) for r in run.trace.r_probe) for run in runs],
                "rate": [max(abs(d) for d in run.trace.ddelta_probe) for run in runs],
            }
            self._harmonic_reports = {
                key: convergence_study(spacings, values) for key, values in metrics.items()
            }
        return self._harmonic_reports

    # ------------------------------------------------------------------
    # Checks
    # ------------------------------------------------------------------

    def check_bijection(self) -> CheckResult:
        worst = 0.0
        for model in (HONEYCOMB, SQUARE):
            rho = random_liquid_slopes(model, self.sizes.round_trips, DEFAULT_MARGIN, seed=1)
            back = slope_from_z(model, z_from_slope(model, rho)).as_array()
            error = np.linalg.norm(back - rho, axis=-1) / np.linalg.norm(rho, axis=-1)
            worst = max(worst, float(error.max()))
        anchors = max(
            abs(complex(z_from_slope(HONEYCOMB, (1 / 3, 1 / 3))) - np.exp(1j * np.pi / 3)),
            abs(complex(z_from_slope(SQUARE, (0.5, 0.5))) - 1j),
        )
        passed = worst < ROUND_TRIP_TOLERANCE and anchors < ANCHOR_TOLERANCE
        return CheckResult(
            "bijection",
            passed,
            f"round trip {worst:.2e}, anchors {anchors:.2e}",
            metrics={"round_trip": worst, "anchors": anchors},
        )

    def check_convexity(self) -> CheckResult:
        min_eig = math.inf
        oracle_error = 0.0
        for model in (HONEYCOMB, SQUARE):
            rho = random_liquid_slopes(model, self.sizes.convexity_samples, DEFAULT_MARGIN, seed=2)
            dual = sigma_hessian(model, rho, method="dual")
            min_eig = min(min_eig, float(dual.eigenvalues.min()))
            if model is HONEYCOMB:
                oracle_error = max(oracle_error, _relative(dual.matrix, lozenge_hessian(rho)))
            for point in rho[: self.sizes.legendre_samples]:
                quadrature = sigma_hessian(model, point, method="legendre")
                min_eig = min(min_eig, float(quadrature.eigenvalues.min()))
                if model is HONEYCOMB:
                    oracle_error = max(oracle_error, _relative(quadrature.matrix, lozenge_hessian(point)))
        passed = min_eig > 0 and oracle_error < ORACLE_TOLERANCE
        return CheckResult(
            "convexity",
            passed,
            f"min eigenvalue {min_eig:.3e}, oracle error {oracle_error:.2e}",
            metrics={"min_eigenvalue": min_eig, "oracle_error": oracle_error},
        )

    def check_identities(self) -> CheckResult:
        worst = 0.0
        for model in (HONEYCOMB, SQUARE):
            rho = random_liquid_slopes(model, self.sizes.identity_samples, IDENTITY_MARGIN, seed=3)
            worst = max(
                worst,
                float(np.max(np.abs(idko_residual(model, rho)))),
                float(np.max(np.abs(id2_residuals(model, rho)))),
            )
        return CheckResult(
            "identities", worst < IDENTITY_TOLERANCE, f"max residual {worst:.2e}", metrics={"max": worst}
        )

    def check_el_burgers(self) -> CheckResult:
        spacings, errors = [], []
        for n in self.sizes.grids:
            _, h = self.burgers_shape(n)
            spacings.append(h.geometry.spacing[0])
            errors.append(el_residual(h, HONEYCOMB).max_el())
        report = convergence_study(spacings, errors)
        epsilon = _epsilon(report)
        passed = report.orders_within(*ORDER_RANGE) and errors[-1] < epsilon
        return CheckResult(
            "el-burgers",
            passed,
            f"max|L| {errors[-1]:.2e} (eps {epsilon:.2e}), order {report.orders[0]:.2f}",
            metrics={"errors": errors, "orders": report.orders, "epsilon": epsilon},
        )

    def check_preservation(self) -> CheckResult:
        reports = self.harmonic_reports()
        fine = self.harmonic_run(self.sizes.grids[-1]).trace
        eps_el, eps_delta = _epsilon(reports["el"]), _epsilon(reports["delta"])
        below = max(fine.max_el) < eps_el and max(fine.max_delta) < eps_delta
        ratios = reports["el"].ratio_close_to(4.0, 0.3) and reports["delta"].ratio_close_to(4.0, 0.3)
        return CheckResult(
            "preservation",
            below and ratios,
            f"T = {fine.times[-1]:.3g}, ratios EL {reports['el'].ratios[0]:.2f}, "
            f"Delta {reports['delta'].ratios[0]:.2f}",
            metrics={
                "T": fine.times[-1],
                "max_el": max(fine.max_el),
                "max_delta": max(fine.max_delta),
                "ratios": [reports["el"].ratios[0], reports["delta"].ratios[0]],
            },
        )

    def check_probe(self) -> CheckResult:
        reports = self.harmonic_reports()
        run = self.harmonic_run(self.sizes.grids[-1])
        node = run.h0.geometry.centre_index()
        eps_r, eps_rate = _epsilon(reports["r"]), _epsilon(reports["rate"])
        r_max = max(abs(r) for r in run.trace.r_probe)

        t_probe = min(2e-3, 0.1 * run.bundle.horizon)
        harmonic_fd = abs(delta_time_derivative(run.bundle, HONEYCOMB, t_probe, node, step=t_probe / 2))

        v = speed_from_preset("abs-z2", HONEYCOMB)
        bundle = CharacteristicBundle.from_height(run.h0, v)
        t_probe = min(2e-3, 0.1 * bundle.horizon)
        fd = delta_time_derivative(bundle, HONEYCOMB, t_probe, node, step=t_probe / 2)
        rate = complex(delta_rate(complex_field_of(bundle.height_field(t_probe), HONEYCOMB), v, HONEYCOMB)[node])
        agreement = abs(fd - rate) / abs(rate) if rate != 0 else math.inf

        passed = r_max < eps_r and harmonic_fd < eps_rate and agreement < RATE_AGREEMENT
        return CheckResult(
            "probe",
            passed,
            f"|R| {r_max:.2e} (eps {eps_r:.2e}), rate mismatch {agreement:.1%}",
            metrics={
                "r_probe": r_max,
                "epsilon_r": eps_r,
                "harmonic_fd_rate": harmonic_fd,
                "rate_agreement": agreement,
            },
        )

    def check_falsifier(self) -> CheckResult:
        reports = self.harmonic_reports()
        zf, h0 = self.burgers_shape(self.sizes.grids[-1])
        node = h0.geometry.centre_index()
        harmonic = abs(delta_rate(zf, speed_from_preset("im-z", HONEYCOMB), HONEYCOMB)[node])
        v = speed_from_preset("abs-z2", HONEYCOMB)
        falsifier = abs(delta_rate(zf, v, HONEYCOMB)[node])

        bundle = CharacteristicBundle.from_height(h0, v)
        T = HORIZON_CAP * bundle.horizon if math.isfinite(bundle.horizon) else 0.1
        trace = run_preservation_experiment(PreservationRun(HONEYCOMB, v, h0, T, outputs=2))
        eps_delta = _epsilon(reports["delta"])
        factor = falsifier / harmonic if harmonic > 0 else math.inf
        passed = factor > FALSIFIER_FACTOR and trace.max_delta[-1] > 10.0 * eps_delta
        return CheckResult(
            "falsifier",
            passed,
            f"rate factor {factor:.2e}, max|Delta(T)| {trace.max_delta[-1]:.2e} vs 10 eps {10 * eps_delta:.2e}",
            metrics={"factor": factor, "max_delta_T": trace.max_delta[-1], "epsilon_delta": eps_delta},
        )

    def check_akpz_signature(self) -> CheckResult:
        resolution = self.sizes.map_resolution
        isotropic = 0
        for model, preset in ((HONEYCOMB, "im-z"), (SQUARE, "im-z"), (SQUARE, "cft-domino")):
            cells = self._classify(speed_from_preset(preset, model), resolution)
            isotropic += sum(label is AkpzLabel.ISOTROPIC for label in cells)
        controls_ok = True
        for model in (HONEYCOMB, SQUARE):
            bowl = self._classify(speed_from_preset("quadratic:1,0,1", model), resolution)
            saddle = self._classify(speed_from_preset("quadratic:0,1,0", model), resolution)
            controls_ok &= all(label is AkpzLabel.ISOTROPIC for label in bowl)
            controls_ok &= all(label is AkpzLabel.AKPZ for label in saddle)
        return CheckResult(
            "akpz-signature",
            isotropic == 0 and controls_ok,
            f"{isotropic} isotropic cells, controls {'ok' if controls_ok else 'wrong'}",
            metrics={"isotropic": isotropic, "controls": controls_ok},
        )

    def _classify(self, v: SpeedFunction, resolution: int) -> list[AkpzLabel]:
        return [r.label for r in akpz_map(v, resolution, DEFAULT_MARGIN, runner=self.runner)]

    def check_consistency(self) -> CheckResult:
        contractions = {}
        for preset in ("im-z", "re-z2"):
            v = speed_from_preset(preset, HONEYCOMB)
            _, coarse = self.burgers_shape(self.sizes.consistency_grids[0])
            T = self._consistency_time(coarse, v)
            differences = [
                self._solver_gap(self.burgers_shape(n)[1], v, T) for n in self.sizes.consistency_grids
            ]
            contractions[preset] = differences[0] / differences[1] if differences[1] > 0 else math.inf
        worst = min(contractions.values())
        return CheckResult(
            "consistency",
            worst >= CONTRACTION_MIN,
            ", ".join(f"{k} x{c:.2f}" for k, c in contractions.items()),
            metrics={"contractions": contractions},
        )

    @staticmethod
    def _consistency_time(h0: HeightField, v: SpeedFunction) -> float:
        horizon = CharacteristicBundle.from_height(h0, v).horizon
        return min(CONSISTENCY_T, 0.25 * horizon)

    def _solver_gap(self, h0: HeightField, v: SpeedFunction, T: float) -> float:
        """``max |h_viscous(T) - h_char(T)|`` with ``nu`` and ``dt`` scaled by ``dx^2``."""
        dx = min(h0.geometry.spacing)
        run = PreservationRun(
            HONEYCOMB,
            v,
            h0,
            T,
            outputs=1,
            solver="viscous",
            nu=CONSISTENCY_NU_FACTOR * dx**2,
            dt=CONSISTENCY_DT_FACTOR * dx**2,
            keep_snapshots=True,
        )
        trace = run_preservation_experiment(run)
        t_end = trace.times[-1]
        reference = CharacteristicBundle.from_height(h0, v).height_field(t_end)
        return float(np.max(np.abs(trace.snapshots[t_end].values - reference.values)))


def _relative(matrix: np.ndarray, oracle: np.ndarray) -> float:
    scale = np.max(np.abs(oracle), axis=(-1, -2))
    return float(np.max(np.max(np.abs(matrix - oracle), axis=(-1, -2)) / scale))


__all__ = ["AcceptanceSuite", "CheckResult", "FULL", "QUICK", "SuiteSizes", "lozenge_hessian"]
