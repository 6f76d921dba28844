"""Service layer running one akpz-lab experiment per invocation."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable

import numpy as np

from akpz_lab import __version__
from akpz_lab.core.acceptance import AcceptanceSuite, CheckResult
from akpz_lab.core.dimer_lattice import DimerModel, random_liquid_slopes, z_from_slope
from akpz_lab.core.evolution import EvolutionTrace, PreservationRun, run_preservation_experiment
from akpz_lab.core.growth_speed import (
    HARMONIC_TOLERANCE,
    AkpzLabel,
    SpeedKind,
    akpz_map,
    laplacian_f,
    slope_grid,
)
from akpz_lab.core.shapes import (
    GridGeometry,
    HeightField,
    check_slope_ratio_nonreal,
    el_residual,
    height_from_zfield,
    implicit_residual,
    minimize_surface_tension,
    profile_from_preset,
    solve_burgers_implicit,
)
from akpz_lab.core.surface_tension import sigma, sigma_dual, sigma_hessian
from akpz_lab.exceptions import ConfigError, ConvergenceError, ValidationError
from akpz_lab.utils.input_validation import parse_floats
from akpz_lab.utils.io import (
    read_height_field,
    write_complex_field,
    write_csv,
    write_height_field,
    write_json,
)

if TYPE_CHECKING:
    from akpz_lab.config import ExperimentConfig
    from akpz_lab.core.runner import ParallelRunner

logger = logging.getLogger(__name__)

AKPZ_MAP_HEADER = ("rho1", "rho2", "v", "h11", "h12", "h22", "det", "label")
SURFACE_TENSION_HEADER = ("rho1", "rho2", "sigma", "s11", "s12", "s22", "eig1", "eig2")
HARMONICITY_HEADER = ("rho1", "rho2", "re_z", "im_z", "laplacian")
TRACE_HEADER = ("t", "max_EL", "max_Delta", "R_probe", "dDelta_probe_re", "dDelta_probe_im")
ACCEPT_HEADER = ("check", "passed", "seconds", "detail")


def shape_from_recipe(
    recipe: str, model: DimerModel, geometry: GridGeometry, seed: complex | None = None
) -> HeightField:
    """Build an initial height field from a ``--shape`` recipe.

    Recipes: ``burgers:<C>`` (implicit Burgers solution integrated to
    heights), ``affine:<rho1,rho2>``, ``sine:<rho1,rho2,amplitude>`` (affine
    plus a bump vanishing on the boundary) and ``file:<stem>``.

    Raises:
        ConfigError: For an unknown or malformed recipe.
    """
    kind, _, body = recipe.partition(":")
    if kind == "burgers":
        zf = solve_burgers_implicit(model, profile_from_preset(body or "const-i"), geometry, seed)
        return height_from_zfield(model, zf)
    if kind == "affine":
        rho = parse_floats(body, 2, "shape")
        return HeightField.affine(geometry, rho, model_name=model.name)
    if kind == "sine":
        rho1, rho2, amplitude = parse_floats(body, 3, "shape")
        x1min, x1max, x2min, x2max = geometry.extent

        def bump(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
            s = np.sin(np.pi * (x1 - x1min) / (x1max - x1min))
            t = np.sin(np.pi * (x2 - x2min) / (x2max - x2min))
            return rho1 * x1 + rho2 * x2 + amplitude * s * t

        return HeightField.from_function(geometry, bump, model.name)
    if kind == "file":
        h = read_height_field(Path(body))
        if h.geometry != geometry:
            logger.info("Using the grid stored with %s instead of --grid/--extent", body)
        return h
    raise ConfigError(f"Invalid shape: {recipe!r}", key="shape")


class ExperimentService:
    """Runs the experiment named in the config and writes its artifacts.

    Every experiment writes its CSV(s) plus ``<experiment>.json`` (the
    resolved config, the package version and a short summary) into the
    output directory.
    """

    def __init__(self, config: ExperimentConfig, runner: ParallelRunner) -> None:
        """Initialize the service with its dependencies.

        Args:
            config: The validated experiment configuration.
            runner: Thread pool and message handler for long computations.
        """
        self.config = config
        self.runner = runner
        self.messages = runner.messages
        self.out_dir = config.output.out_dir
        self.model = config.model.model

    def execute(self) -> dict[str, Any]:
        """Run the configured experiment and return its summary."""
        handlers: dict[str, Callable[[], dict[str, Any]]] = {
            "akpz-map": self.akpz_map,
            "surface-tension": self.surface_tension,
            "harmonicity": self.harmonicity,
            "make-shape": self.make_shape,
            "el-preserve": self.el_preserve,
            "accept": self.accept,
        }
        experiment = self.config.experiment
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.messages.info("Running %s (output in %s)", experiment, self.out_dir)
        summary = handlers[experiment]()
        write_json(
            self.out_dir / f"{experiment}.json",
            {"config": self.config.to_dict(), "version": __version__, "summary": summary},
        )
        self.messages.summary_table(experiment, summary)
        return summary

    # ------------------------------------------------------------------
    # Experiments
    # ------------------------------------------------------------------

    def akpz_map(self) -> dict[str, Any]:
        """Classify the slope grid by the sign of ``det D^2 v``."""
        v = self.config.speed.build(self.model)
        results = self.runner.run(
            f"Classifying {v.name} on {self.model.name}",
            akpz_map,
            v,
            self.config.grid.resolution,
            self.config.model.margin,
            self.config.speed.tolerance,
            self.runner,
        )
        rows = [
            (*r.rho, r.value, r.hessian[0, 0], r.hessian[0, 1], r.hessian[1, 1], r.det, r.label.value)
            for r in results
        ]
        write_csv(self.out_dir / "akpz_map.csv", AKPZ_MAP_HEADER, rows)
        counts = {label.value: sum(r.label is label for r in results) for label in AkpzLabel}
        self.messages.info(
            "%d slopes: %d AKPZ, %d ISOTROPIC, %d DEGENERATE",
            len(results),
            counts["AKPZ"],
            counts["ISOTROPIC"],
            counts["DEGENERATE"],
        )
        return {"cells": len(results), "counts": counts}

    def surface_tension(self) -> dict[str, Any]:
        """``sigma`` and its Hessian at sampled (or one given) liquid slopes."""
        solver = self.config.solver
        delta = self.config.model.margin
        if solver.rho is not None:
            points = np.asarray([solver.rho], dtype=float)
        else:
            points = random_liquid_slopes(self.model, solver.samples, delta, solver.seed)

        def evaluate(chunk: list[np.ndarray]) -> list[tuple[float, ...]]:
            rows = []
            for rho in chunk:
                matrix = sigma_hessian(self.model, rho, method=solver.sigma_method, delta=delta)
                if solver.sigma_method == "dual":
                    value = float(sigma_dual(self.model, rho))
                else:
                    value = sigma(self.model, rho, delta).value
                rows.append((rho[0], rho[1], value, matrix.s11, matrix.s12, matrix.s22, *matrix.eigenvalues))
            return rows

        rows = self.runner.map_chunks(
            evaluate, list(points), 8, text=f"Evaluating surface tension at {len(points)} slopes"
        )
        write_csv(self.out_dir / "surface_tension.csv", SURFACE_TENSION_HEADER, rows)
        min_eig = min((row[6] for row in rows), default=float("nan"))
        if rows and min_eig <= 0:
            self.messages.warning("Sigma is not positive definite at some slope (min eigenvalue %.3e)", min_eig)
        return {"slopes": len(rows), "min_eigenvalue": min_eig}

    def harmonicity(self) -> dict[str, Any]:
        """Five-point Laplacian of ``f`` over the liquid slope grid."""
        v = self.config.speed.build(self.model)
        if v.kind is not SpeedKind.Z:
            raise ValidationError(f"speed {v.name!r} is slope-native; harmonicity needs f(z)")
        grid = slope_grid(self.model, self.config.grid.resolution, self.config.model.margin)
        z = np.asarray(z_from_slope(self.model, grid))
        laplacian = np.atleast_1d(laplacian_f(v, z))
        rows = zip(grid[:, 0], grid[:, 1], z.real, z.imag, laplacian)
        write_csv(self.out_dir / "harmonicity.csv", HARMONICITY_HEADER, rows)
        worst = float(np.max(np.abs(laplacian))) if laplacian.size else 0.0
        if v.harmonic and worst > HARMONIC_TOLERANCE:
            self.messages.warning("%s is flagged harmonic but |Lap f| reaches %.3e", v.name, worst)
        self.messages.info("max |Lap f| = %.3e over %d slopes", worst, len(grid))
        return {"slopes": int(len(grid)), "max_abs_laplacian": worst, "harmonic": v.harmonic}

    def make_shape(self) -> dict[str, Any]:
        """Build a height field by the implicit Burgers route or by minimisation."""
        solver = self.config.solver
        geometry = self.config.grid.geometry
        delta = self.config.model.margin
        summary: dict[str, Any] = {"method": solver.method}

        if solver.method == "burgers":
            profile = profile_from_preset(solver.profile)
            zf = self.runner.run(
                "Solving the implicit Burgers relation",
                solve_burgers_implicit,
                self.model,
                profile,
                geometry,
                solver.seed_z,
            )
            write_complex_field(self.out_dir / "zfield", zf)
            ratio = check_slope_ratio_nonreal(zf)
            summary.update(
                masked=int((~zf.mask).sum()),
                branch_consistent=zf.branch_consistent,
                max_implicit_residual=float(np.nanmax(implicit_residual(zf, profile))),
                slope_ratio_checked=ratio.checked,
                slope_ratio_max_deviation=ratio.max_deviation,
                slope_ratio_passed=ratio.passed,
            )
            if not zf.complete:
                raise ConvergenceError(
                    "implicit Burgers solve left masked nodes; no height field written",
                    masked=summary["masked"],
                    nodes=int(zf.mask.size),
                )
            h = height_from_zfield(self.model, zf)
        else:
            boundary = shape_from_recipe(solver.shape, self.model, geometry, solver.seed_z)
            h = self.runner.run(
                "Minimising the surface-tension functional",
                minimize_surface_tension,
                self.model,
                boundary,
                delta,
            )

        write_height_field(self.out_dir / "height", h)
        residual = el_residual(h, self.model, delta)
        summary.update(
            max_el=residual.max_el(),
            max_burgers=residual.max_burgers(),
            centre_hessian_norm=float(residual.hessian_norm[geometry.centre_index()]),
        )
        self.messages.info(
            "max|L[h]| = %.3e, max|Delta| = %.3e", summary["max_el"], summary["max_burgers"]
        )
        return summary

    def el_preserve(self) -> dict[str, Any]:
        """Evolve a shape and record residuals at the output times."""
        solver = self.config.solver
        v = self.config.speed.build(self.model)
        initial = shape_from_recipe(solver.shape, self.model, self.config.grid.geometry, solver.seed_z)
        solvers = ["char", "viscous"] if solver.solver == "both" else [solver.solver]

        summary: dict[str, Any] = {}
        for name in solvers:
            run = PreservationRun(
                model=self.model,
                speed=v,
                initial=initial,
                T=solver.T,
                outputs=solver.outputs,
                solver=name,
                nu=solver.nu,
                dt=solver.dt,
                keep_snapshots=True,
            )
            trace = self.runner.run(f"Evolving with the {name} solver", run_preservation_experiment, run)
            stem = "trace" if name == solvers[0] else f"trace_{name}"
            write_csv(self.out_dir / f"{stem}.csv", TRACE_HEADER, trace.rows())
            self._write_snapshots(trace, name)
            if trace.capped:
                self.messages.warning(
                    "T capped at %.6g = 0.8 x crossing horizon (requested %.6g)", trace.times[-1], solver.T
                )
            summary[name] = {
                "T": trace.times[-1],
                "capped": trace.capped,
                "horizon": trace.horizon,
                "max_EL": max(trace.max_el),
                "max_Delta": max(trace.max_delta),
            }
        return summary

    def _write_snapshots(self, trace: EvolutionTrace, solver: str) -> None:
        for index, t in enumerate(sorted(trace.snapshots)):
            write_height_field(self.out_dir / "snapshots" / f"h_{solver}_{index:03d}", trace.snapshots[t])

    def accept(self) -> dict[str, Any]:
        """Run the acceptance suite and print the PASS/FAIL table."""
        suite = AcceptanceSuite(runner=self.runner, quick=self.config.solver.quick)
        results: list[CheckResult] = suite.run()
        write_csv(
            self.out_dir / "accept.csv",
            ACCEPT_HEADER,
            [(r.name, r.passed, r.seconds, r.detail) for r in results],
        )
        self.messages.verdict_table(
            "akpz-lab acceptance", [(r.name, r.passed, r.detail) for r in results]
        )
        return {
            "passed": all(r.passed for r in results),
            "checks": {r.name: {"passed": r.passed, "metrics": r.metrics} for r in results},
        }


__all__ = ["ExperimentService", "shape_from_recipe"]
