"""Click-based command-line interface for *akpz-lab*.

This module exposes the :data:`cli` group with one subcommand per
experiment:

* ``akpz-map``, ``harmonicity``, ``surface-tension`` work in slope space.
* ``make-shape`` and ``el-preserve`` work on height fields over a grid.
* ``accept`` runs the acceptance suite; ``generate-config`` writes templates.

Public attributes exported via :pydata:`__all__`:

* ``cli``  – Root *click* group for re-use by external tooling/tests.
* ``main`` – Entrypoint dispatched by the ``akpz-lab`` console script.
"""

from __future__ import annotations

import sys
import traceback
from pathlib import Path
from typing import Any, Callable

import click
from click.core import ParameterSource
from rich.console import Console

from akpz_lab import __version__
from akpz_lab.config import DEFAULTS, EXPERIMENT_KEYS, EXPERIMENTS, ExperimentConfig
from akpz_lab.core.dimer_lattice import MODELS
from akpz_lab.core.runner import ParallelRunner
from akpz_lab.core.service import ExperimentService
from akpz_lab.exceptions import AkpzLabError, NumericalError
from akpz_lab.utils.config_generation import generate_config
from akpz_lab.utils.io import write_json
from akpz_lab.utils.logging_utils import configure as configure_root_logger
from akpz_lab.utils.logging_utils import print_ascii_art

# ---------------------------------------------------------------------------
# Helper functions
# ---------------------------------------------------------------------------


def print_banner(ctx: click.Context, _param: click.Parameter, value: bool) -> None:
    """Print the ASCII art banner and exit (unless ``--help`` is also given)."""
    if not value or ctx.resilient_parsing:
        return

    print_ascii_art()

    if not any(help_opt in sys.argv for help_opt in ("-h", "--help")):
        ctx.exit()


# Flag declarations shared by the subcommands; defaults come from the config module.
_OPTIONS: dict[str, Callable[[Callable[..., Any]], Callable[..., Any]]] = {
    "model": click.option(
        "--model", type=click.Choice(sorted(MODELS)), default=DEFAULTS["model"], show_default=True,
        help="Dimer model",
    ),
    "margin": click.option(
        "--margin", type=float, default=DEFAULTS["margin"], show_default=True,
        help="Distance kept from the Newton polygon boundary",
    ),
    "speed": click.option(
        "--speed", default=DEFAULTS["speed"], show_default=True,
        help="Speed preset: im-z, cft-domino, re-z, im-log-z, re-z2, abs-z2, const:<c>, quadratic:<a,b,c>",
    ),
    "tolerance": click.option(
        "--tolerance", type=float, default=DEFAULTS["tolerance"], show_default=True,
        help="Degeneracy band tau (scaled by max(1, |D^2 v|^2))",
    ),
    "resolution": click.option(
        "--resolution", type=int, default=DEFAULTS["resolution"], show_default=True,
        help="Slope cells per axis",
    ),
    "grid": click.option(
        "--grid", default=DEFAULTS["grid"], show_default=True, help="Grid nodes n1xn2",
    ),
    "extent": click.option(
        "--extent", default=DEFAULTS["extent"], show_default=True, help="x1min,x1max,x2min,x2max",
    ),
    "method": click.option(
        "--method", type=click.Choice(["variational", "burgers"]), default=DEFAULTS["method"],
        show_default=True, help="Shape construction route",
    ),
    "C": click.option(
        "--C", "C", default=DEFAULTS["C"], show_default=True, help="Profile C(z): const-i or affine:<a,b>",
    ),
    "seed_z": click.option(
        "--seed-z", "seed_z", default=None, help="Start value of z at the grid origin, e.g. 0.75+0.25i",
    ),
    "shape": click.option(
        "--shape", default=DEFAULTS["shape"], show_default=True,
        help="Shape recipe: burgers:<C>, affine:<rho1,rho2>, sine:<rho1,rho2,amp>, file:<stem>",
    ),
    "T": click.option(
        "--T", "T", type=float, default=DEFAULTS["T"], show_default=True,
        help="Final time (capped at 0.8 x crossing horizon)",
    ),
    "solver": click.option(
        "--solver", type=click.Choice(["char", "viscous", "both"]), default=DEFAULTS["solver"],
        show_default=True, help="Evolution solver",
    ),
    "nu": click.option("--nu", type=float, default=None, help="Viscosity [default: 4 dx^2]"),
    "dt": click.option("--dt", type=float, default=None, help="Time step [default: half the CFL bound]"),
    "outputs": click.option(
        "--outputs", type=int, default=DEFAULTS["outputs"], show_default=True,
        help="Output times after t = 0",
    ),
    "samples": click.option(
        "--samples", type=int, default=DEFAULTS["samples"], show_default=True,
        help="Random liquid slopes to evaluate",
    ),
    "seed": click.option(
        "--seed", type=int, default=DEFAULTS["seed"], show_default=True, help="Random seed",
    ),
    "rho": click.option("--rho", default=None, help="Single slope rho1,rho2 instead of samples"),
    "sigma_method": click.option(
        "--sigma-method", "sigma_method", type=click.Choice(["legendre", "dual"]),
        default=DEFAULTS["sigma_method"], show_default=True, help="Surface-tension Hessian route",
    ),
    "quick": click.option("--quick", is_flag=True, help="Smaller samples and grids"),
    "out": click.option(
        "--out", type=click.Path(path_type=Path, file_okay=False), default=DEFAULTS["out"],
        show_default=True, help="Output directory",
    ),
}


def _experiment_command(group: click.Group, experiment: str, help_text: str) -> None:
    """Register *experiment* on *group* with the flags it accepts."""

    @click.pass_context
    def command(ctx: click.Context, **params: Any) -> None:
        defaulted = {
            name for name in params if ctx.get_parameter_source(name) is ParameterSource.DEFAULT
        }
        config_file: Path | None = ctx.obj.get("config") if ctx.obj else None
        config = ExperimentConfig.from_cli(experiment, params, defaulted, config_file)
        ctx.obj["out_dir"] = config.output.out_dir

        runner = ParallelRunner(console=Console(stderr=True))
        summary = ExperimentService(config=config, runner=runner).execute()
        if experiment == "accept" and not summary["passed"]:
            ctx.exit(1)
        runner.messages.success(f"{experiment} finished")

    command.__doc__ = help_text
    for key in reversed(EXPERIMENT_KEYS[experiment]):
        command = _OPTIONS[key](command)
    group.command(experiment, help=help_text)(command)


_HELP = {
    "akpz-map": "Classify liquid slopes by the sign of det D^2 v (CSV: rho1, rho2, v, h11, h12, h22, det, label).",
    "el-preserve": "Evolve a shape by h_t = v(grad h) and trace the EL and Burgers residuals (trace.csv).",
    "harmonicity": "Five-point Laplacian of f over the liquid slope grid (CSV: rho1, rho2, re_z, im_z, laplacian).",
    "surface-tension": "Surface tension and its Hessian at liquid slopes (CSV: rho1, rho2, sigma, s11, s12, s22, eig1, eig2).",
    "make-shape": "Build a height field by the implicit Burgers route or by minimising the surface tension.",
    "accept": "Run the acceptance suite and print a PASS/FAIL table.",
}


def build_cli() -> click.Group:  # noqa: D401
    """Construct the root *Click* group.

    The returned group is assigned to the module-level :data:`cli` variable
    so it can be imported by third-party callers without rebuilding the
    option tree on every import.
    """

    @click.group(context_settings={"help_option_names": ["-h", "--help"]})
    @click.option(
        "--banner",
        is_flag=True,
        is_eager=True,
        expose_value=False,
        callback=print_banner,
        help="Show the ASCII art banner and exit",
    )
    @click.option("-v", "--verbose", is_flag=True, help="Verbose output")
    @click.option("-q", "--quiet", is_flag=True, help="Suppress output")
    @click.option(
        "--config",
        type=click.Path(path_type=Path, dir_okay=False, exists=True),
        default=None,
        help="JSON config file; explicit flags take precedence",
    )
    @click.version_option(__version__, "--version", prog_name="akpz-lab")
    @click.pass_context
    def main_group(ctx: click.Context, verbose: bool, quiet: bool, config: Path | None) -> None:
        """Numerical laboratory for anisotropic KPZ growth on dimer models."""
        configure_root_logger(verbose, quiet)
        ctx.ensure_object(dict)
        ctx.obj["config"] = config

    for experiment in EXPERIMENTS:
        _experiment_command(main_group, experiment, _HELP[experiment])

    @main_group.command("generate-config")
    @click.argument("experiment", type=click.Choice(EXPERIMENTS))
    @click.option(
        "-o", "--output", type=click.Path(path_type=Path, dir_okay=False), default=None,
        help="Target file [default: <experiment>.json]",
    )
    @click.option("--force", is_flag=True, help="Overwrite an existing file")
    def generate_config_command(experiment: str, output: Path | None, force: bool) -> None:
        """Write a JSON config template filled with defaults."""
        generate_config(experiment, output, force)

    return main_group


# Build the group on import so external callers can re-use it.
cli = build_cli()


def format_click_error(error: Exception) -> str:
    """Format Click exceptions into user-friendly error messages."""
    if isinstance(error, click.NoSuchOption):
        return f"Error: Unknown option: {error.option_name}"
    if isinstance(error, click.ClickException):
        return f"Error: {error.format_message()}"
    return f"Error: {str(error)}"


def write_diagnostic(error: NumericalError, out_dir: Path | None) -> Path | None:
    """Write ``<out>/diagnostic.json`` for a numerical failure."""
    if out_dir is None:
        return None
    try:
        return write_json(out_dir / "diagnostic.json", error.to_dict())
    except OSError:
        return None


def main(argv: list[str] | None = None) -> int:  # noqa: D401
    """Run :data:`cli` and map failures to exit codes.

    Returns:
        int: 0 on success, 1 on numerical failure (with ``diagnostic.json``),
        2 on usage or configuration errors.
    """
    context: dict[str, Any] = {}
    try:
        rv = cli.main(args=argv, prog_name="akpz-lab", standalone_mode=False, obj=context)
        return rv if isinstance(rv, int) else 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except NumericalError as e:
        path = write_diagnostic(e, context.get("out_dir") or Path(DEFAULTS["out"]))
        click.echo(format_click_error(e), err=True)
        if path is not None:
            click.echo(f"Diagnostic written to {path}", err=True)
        return e.exit_code
    except AkpzLabError as e:
        click.echo(format_click_error(e), err=True)
        return e.exit_code
    except click.ClickException as e:
        click.echo(format_click_error(e), err=True)
        return e.exit_code
    except Exception as e:  # pylint: disable=broad-exception-caught
        click.echo(f"An unexpected error occurred: {str(e)}", err=True)
        if "--verbose" in sys.argv or "-v" in sys.argv:
            traceback.print_exc()
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

# ---------------------------------------------------------------------------
# Public re-exports (documented in the module docstring)
# ---------------------------------------------------------------------------

__all__: list[str] = [
    "cli",
    "main",
]
