"""Configuration management for akpz-lab."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from akpz_lab.core.dimer_lattice import DEFAULT_MARGIN, DimerModel, get_model
from akpz_lab.core.growth_speed import DEFAULT_TAU, SpeedFunction, SpeedKind, speed_from_preset
from akpz_lab.core.shapes import GridGeometry, profile_from_preset
from akpz_lab.exceptions import ConfigError
from akpz_lab.utils.input_validation import (
    parse_extent,
    parse_floats,
    parse_grid,
    parse_seed,
    validate_output_dir,
    validate_positive,
    validate_shape_recipe,
)
from akpz_lab.utils.io import read_json

EXPERIMENTS = (
    "akpz-map",
    "el-preserve",
    "harmonicity",
    "surface-tension",
    "make-shape",
    "accept",
)

DEFAULT_MODEL = "honeycomb"
DEFAULT_SPEED = "im-z"
DEFAULT_GRID = "65x65"
DEFAULT_EXTENT = "0.5,1.5,-0.5,0.5"
DEFAULT_PROFILE = "const-i"
DEFAULT_SHAPE = "burgers:const-i"
DEFAULT_OUT = "results"

# Flag name -> default, shared by the CLI options and the config templates.
DEFAULTS: dict[str, Any] = {
    "model": DEFAULT_MODEL,
    "margin": DEFAULT_MARGIN,
    "speed": DEFAULT_SPEED,
    "tolerance": DEFAULT_TAU,
    "resolution": 50,
    "grid": DEFAULT_GRID,
    "extent": DEFAULT_EXTENT,
    "method": "burgers",
    "C": DEFAULT_PROFILE,
    "seed_z": None,
    "shape": DEFAULT_SHAPE,
    "T": 0.05,
    "solver": "char",
    "nu": None,
    "dt": None,
    "outputs": 4,
    "samples": 20,
    "seed": 0,
    "rho": None,
    "sigma_method": "legendre",
    "quick": False,
    "out": DEFAULT_OUT,
}

# Keys each experiment accepts, on the command line and in --config files.
EXPERIMENT_KEYS: dict[str, tuple[str, ...]] = {
    "akpz-map": ("model", "speed", "resolution", "margin", "tolerance", "out"),
    "harmonicity": ("model", "speed", "resolution", "margin", "out"),
    "surface-tension": ("model", "samples", "seed", "rho", "sigma_method", "margin", "out"),
    "make-shape": ("model", "method", "C", "shape", "grid", "extent", "seed_z", "margin", "out"),
    "el-preserve": (
        "model", "speed", "shape", "grid", "extent", "T", "solver", "nu", "dt", "outputs", "margin", "out",
    ),
    "accept": ("quick", "out"),
}


@dataclass
class ModelSettings:
    """Dimer model selection."""

    name: str = DEFAULT_MODEL
    margin: float = DEFAULT_MARGIN

    @property
    def model(self) -> DimerModel:
        return get_model(self.name)


@dataclass
class SpeedSettings:
    """Growth speed preset and classification band."""

    preset: str = DEFAULT_SPEED
    tolerance: float = DEFAULT_TAU

    def build(self, model: DimerModel) -> SpeedFunction:
        return speed_from_preset(self.preset, model)


@dataclass
class GridSettings:
    """Spatial grid for shapes and evolution, and the slope-grid resolution."""

    shape: tuple[int, int] = (65, 65)
    extent: tuple[float, float, float, float] = (0.5, 1.5, -0.5, 0.5)
    resolution: int = 50

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry.from_extent(self.extent, self.shape)


@dataclass
class SolverSettings:
    """Shape construction, time stepping and sampling parameters."""

    method: str = "burgers"
    profile: str = DEFAULT_PROFILE
    shape: str = DEFAULT_SHAPE
    seed_z: complex | None = None
    T: float = 0.05
    solver: str = "char"
    nu: float | None = None
    dt: float | None = None
    outputs: int = 4
    samples: int = 20
    seed: int = 0
    rho: tuple[float, float] | None = None
    sigma_method: str = "legendre"
    quick: bool = False


@dataclass
class OutputSettings:
    """Where artifacts go."""

    out_dir: Path = Path(DEFAULT_OUT)


_CHOICES = {
    "method": ("variational", "burgers"),
    "solver": ("char", "viscous", "both"),
    "sigma_method": ("legendre", "dual"),
}


def _choice(key: str) -> Callable[[Any], str]:
    def parse(value: Any) -> str:
        if value not in _CHOICES[key]:
            raise ConfigError(f"Invalid {key}: {value!r} (choose from {', '.join(_CHOICES[key])})", key=key)
        return str(value)

    return parse


def _number(key: str, kind: type = float, allow_zero: bool = False) -> Callable[[Any], Any]:
    def parse(value: Any) -> Any:
        if value is None:
            return None
        try:
            number = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"Invalid {key}: {value!r}", key=key) from None
        validate_positive(key, number, allow_zero)
        return number

    return parse


def _rho(value: Any) -> tuple[float, float] | None:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        value = ",".join(str(v) for v in value)
    return parse_floats(value, 2, "rho")  # type: ignore[return-value]


# key -> (section, attribute, parser)
_FIELDS: dict[str, tuple[str, str, Callable[[Any], Any]]] = {
    "model": ("model", "name", lambda v: get_model(str(v)).name),
    "margin": ("model", "margin", _number("margin")),
    "speed": ("speed", "preset", str),
    "tolerance": ("speed", "tolerance", _number("tolerance")),
    "resolution": ("grid", "resolution", _number("resolution", int)),
    "grid": ("grid", "shape", lambda v: parse_grid(v if isinstance(v, str) else "x".join(map(str, v)))),
    "extent": ("grid", "extent", lambda v: parse_extent(v if isinstance(v, str) else ",".join(map(str, v)))),
    "method": ("solver", "method", _choice("method")),
    "C": ("solver", "profile", lambda v: profile_from_preset(str(v)).name),
    "seed_z": ("solver", "seed_z", lambda v: parse_seed(None if v is None else str(v))),
    "shape": ("solver", "shape", validate_shape_recipe),
    "T": ("solver", "T", _number("T", allow_zero=True)),
    "solver": ("solver", "solver", _choice("solver")),
    "nu": ("solver", "nu", _number("nu", allow_zero=True)),
    "dt": ("solver", "dt", _number("dt")),
    "outputs": ("solver", "outputs", _number("outputs", int)),
    "samples": ("solver", "samples", _number("samples", int)),
    "seed": ("solver", "seed", _number("seed", int, allow_zero=True)),
    "rho": ("solver", "rho", _rho),
    "sigma_method": ("solver", "sigma_method", _choice("sigma_method")),
    "quick": ("solver", "quick", bool),
    "out": ("output", "out_dir", lambda v: validate_output_dir(Path(v))),
}


@dataclass
class ExperimentConfig:
    """Aggregate of all configuration domains for one experiment."""

    experiment: str
    model: ModelSettings = field(default_factory=ModelSettings)
    speed: SpeedSettings = field(default_factory=SpeedSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    # ---------------------------------------------------------------------
    # Constructors
    # ---------------------------------------------------------------------

    @classmethod
    def from_cli(
        cls,
        experiment: str,
        params: Mapping[str, Any],
        defaulted: set[str] | frozenset[str] = frozenset(),
        config_file: Path | None = None,
    ) -> "ExperimentConfig":
        """Create a config from parsed CLI *params*.

        Values from *config_file* fill in every key whose flag was left at its
        default (the names in *defaulted*); explicit flags win.

        Raises:
            ConfigError: For unknown keys or invalid values.
        """
        if experiment not in EXPERIMENT_KEYS:
            raise ConfigError(f"Unknown experiment: {experiment!r}", key="experiment")
        allowed = EXPERIMENT_KEYS[experiment]
        values = {key: params.get(key, DEFAULTS[key]) for key in allowed}
        if config_file is not None:
            for key, value in read_json(config_file).items():
                if key not in allowed:
                    raise ConfigError(
                        f"Unknown config key {key!r} for {experiment} "
                        f"(allowed: {', '.join(allowed)})",
                        key=key,
                    )
                if key in defaulted or key not in params:
                    values[key] = value

        config = cls(experiment=experiment)
        for key, value in values.items():
            section, attribute, parse = _FIELDS[key]
            setattr(getattr(config, section), attribute, parse(value))
        config.validate()
        return config

    def validate(self) -> None:
        """Cross-field checks run before any computation."""
        model = self.model.model
        if self.experiment in {"akpz-map", "harmonicity", "el-preserve"}:
            self.speed.build(model)
        if self.experiment in {"make-shape", "el-preserve"}:
            _ = self.grid.geometry
        if self.experiment == "harmonicity" and self.speed.build(model).kind is not SpeedKind.Z:
            raise ConfigError("harmonicity needs a z-composed speed preset", key="speed")

    def to_dict(self) -> dict[str, Any]:
        """Plain dictionary (for the run manifest)."""
        data = asdict(self)
        data["output"]["out_dir"] = str(self.output.out_dir)
        if self.solver.seed_z is not None:
            data["solver"]["seed_z"] = [self.solver.seed_z.real, self.solver.seed_z.imag]
        return data


def template(experiment: str) -> dict[str, Any]:
    """Defaults of every key *experiment* accepts."""
    if experiment not in EXPERIMENT_KEYS:
        raise ConfigError(f"Unknown experiment: {experiment!r}", key="experiment")
    return {key: DEFAULTS[key] for key in EXPERIMENT_KEYS[experiment]}


__all__ = [
    "DEFAULTS",
    "EXPERIMENTS",
    "EXPERIMENT_KEYS",
    "ExperimentConfig",
    "GridSettings",
    "ModelSettings",
    "OutputSettings",
    "SolverSettings",
    "SpeedSettings",
    "template",
]
