import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

# Load environment variables
load_dotenv()

# Disks must stay inside half the honeycomb nearest-neighbour distance
MAX_RADIUS_FRACTION = 1.0 / (2.0 * math.sqrt(3.0))


class Config:
    # Geometry
    LATTICE_CONSTANT = os.getenv("HONEYCOMB_LATTICE_CONSTANT")
    DISK_RADIUS_FRACTION = float(os.getenv("DISK_RADIUS_FRACTION", "0.15"))
    NODES_PER_BOUNDARY = int(os.getenv("NODES_PER_BOUNDARY", "128"))

    # Green's function
    GREEN_METHOD = os.getenv("GREEN_METHOD", "ewald")
    GREEN_TOL = float(os.getenv("GREEN_TOL", "1e-12"))
    SPECTRAL_TOL = float(os.getenv("SPECTRAL_TOL", "1e-3"))
    SPECTRAL_CUTOFF_FACTOR = float(os.getenv("SPECTRAL_CUTOFF_FACTOR", "40"))
    EWALD_SPLIT_FACTOR = float(os.getenv("EWALD_SPLIT_FACTOR", "1.0"))
    EWALD_MAX_INDEX = int(os.getenv("EWALD_MAX_INDEX", "60"))
    EXCLUSION_FACTOR = float(os.getenv("EXCLUSION_FACTOR", "1e-10"))

    # Nystrom solve and structure checks
    SOLVE_TOL = float(os.getenv("SOLVE_TOL", "1e-8"))
    MAX_CONDITION = float(os.getenv("MAX_CONDITION", "1e12"))
    STRUCTURE_TOL = float(os.getenv("STRUCTURE_TOL", "1e-8"))
    MODE_TOL = float(os.getenv("MODE_TOL", "1e-14"))
    FD_STEP_FACTOR = float(os.getenv("FD_STEP_FACTOR", "1e-3"))
    PAIRING_RESOLUTION = int(os.getenv("PAIRING_RESOLUTION", "64"))
    PAIRING_TOL = float(os.getenv("PAIRING_TOL", "1e-3"))

    # Effective model
    DELTA = float(os.getenv("DELTA", "1e-4"))
    EPSILON = float(os.getenv("EPSILON", "0.25"))
    CONE_WINDOW = float(os.getenv("CONE_WINDOW", "0.05"))
    CONE_RADII = int(os.getenv("CONE_RADII", "3"))
    CONE_DIRECTIONS = int(os.getenv("CONE_DIRECTIONS", "8"))
    CONE_FIT_TOL = float(os.getenv("CONE_FIT_TOL", "0.05"))

    # Grids
    ENVELOPE_POINTS = int(os.getenv("ENVELOPE_POINTS", "256"))
    ENVELOPE_SPAN_FACTOR = float(os.getenv("ENVELOPE_SPAN_FACTOR", "40"))
    PACKET_POINTS = int(os.getenv("PACKET_POINTS", "128"))
    PACKET_SPAN_FACTOR = float(os.getenv("PACKET_SPAN_FACTOR", "16"))
    MODE_TABLE_POINTS = int(os.getenv("MODE_TABLE_POINTS", "96"))
    BAND_GRID = int(os.getenv("BAND_GRID", "16"))
    FLOQUET_TRUNCATION = int(os.getenv("FLOQUET_TRUNCATION", "12"))
    FLOQUET_TAIL_TOL = float(os.getenv("FLOQUET_TAIL_TOL", "1e-12"))
    DECAY_TOL = float(os.getenv("DECAY_TOL", "1e-10"))

    # Caching
    CACHE_EXPIRY_HOURS = int(os.getenv("CACHE_EXPIRY_HOURS", "24"))
    USE_CACHE = os.getenv("USE_CACHE", "true").lower() == "true"
    CACHE_PATH = os.getenv("HONEYCOMB_CACHE_PATH")

    # Selfcheck sampling
    SELFCHECK_ALPHA_SAMPLES = int(os.getenv("SELFCHECK_ALPHA_SAMPLES", "6"))
    SELFCHECK_POINTS = int(os.getenv("SELFCHECK_POINTS", "40"))

    GREEN_METHODS = {"ewald", "spectral_cutoff"}
    SNAPSHOT_FORMATS = {"binary", "csv"}
    SUBCOMMANDS = {"bands", "cone", "coeff", "evolve", "packet", "selfcheck"}

    @classmethod
    def validate(cls):
        """Validate environment-level defaults"""
        problems = []
        if cls.GREEN_METHOD not in cls.GREEN_METHODS:
            problems.append(f"GREEN_METHOD={cls.GREEN_METHOD}")
        if not 0 < cls.DISK_RADIUS_FRACTION < MAX_RADIUS_FRACTION:
            problems.append(f"DISK_RADIUS_FRACTION={cls.DISK_RADIUS_FRACTION}")
        if cls.NODES_PER_BOUNDARY < 16 or cls.NODES_PER_BOUNDARY % 2:
            problems.append(f"NODES_PER_BOUNDARY={cls.NODES_PER_BOUNDARY}")

        if problems:
            raise ValueError(f"Invalid environment defaults: {', '.join(problems)}")

        return True


class GaussianSpec(BaseModel):
    """Gaussian envelope amplitude * exp(i phase) * exp(-|x - center|^2 / (2 width^2))"""

    model_config = ConfigDict(extra="forbid")

    center: Tuple[float, float] = (0.0, 0.0)
    width: float = Field(1.0, gt=0)
    amplitude: float = Field(1.0, ge=0)
    phase: float = 0.0


class EnvelopeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    F1: GaussianSpec = GaussianSpec()
    F2: GaussianSpec = GaussianSpec(amplitude=0.0)

    @property
    def width(self) -> float:
        active = [g.width for g in (self.F1, self.F2) if g.amplitude > 0]
        return max(active) if active else self.F1.width


class GreenSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Literal["ewald", "spectral_cutoff"] = Config.GREEN_METHOD
    target_tol: float = Field(Config.GREEN_TOL, gt=0)
    ewald_split: Optional[float] = Field(None, gt=0)
    cutoff_radius: Optional[float] = Field(None, gt=0)


class ConeSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    window: float = Field(Config.CONE_WINDOW, gt=0, le=0.5)
    n_radii: int = Field(Config.CONE_RADII, ge=3)
    n_directions: int = Field(Config.CONE_DIRECTIONS, ge=4)


class GridSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    envelope_points: int = Field(Config.ENVELOPE_POINTS, ge=8)
    envelope_span_factor: float = Field(Config.ENVELOPE_SPAN_FACTOR, gt=0)
    packet_points: int = Field(Config.PACKET_POINTS, ge=8)
    packet_span_factor: float = Field(Config.PACKET_SPAN_FACTOR, gt=0)
    mode_table_points: int = Field(Config.MODE_TABLE_POINTS, ge=16)
    band_points: int = Field(Config.BAND_GRID, ge=2)
    pairing_resolution: int = Field(Config.PAIRING_RESOLUTION, ge=8)
    floquet_cells: int = Field(Config.FLOQUET_TRUNCATION, ge=1)


class RunConfig(BaseModel):
    """Schema of the JSON run configuration"""

    model_config = ConfigDict(extra="forbid")

    lattice_constant: Optional[float] = Field(None, gt=0)
    radius_fraction: float = Field(Config.DISK_RADIUS_FRACTION, gt=0)
    nodes_per_boundary: int = Field(Config.NODES_PER_BOUNDARY, ge=16)
    green: GreenSettings = GreenSettings()
    delta: float = Field(Config.DELTA, gt=0)
    epsilon: float = Field(Config.EPSILON, gt=0)
    envelope: EnvelopeSpec = EnvelopeSpec()
    cone: ConeSettings = ConeSettings()
    grid: GridSettings = GridSettings()
    times: List[float] = [0.0, 1.0, 2.0]
    snapshot_format: Literal["binary", "csv"] = "binary"
    output_dir: str = "results"
    seed: int = Field(0, ge=0)
    threads: int = Field(0, ge=0)

    @field_validator("radius_fraction")
    @classmethod
    def radius_inside_cell(cls, value: float) -> float:
        if value >= MAX_RADIUS_FRACTION:
            raise ValueError(f"disks overlap: radius fraction must be < {MAX_RADIUS_FRACTION:.6f}")
        return value

    @field_validator("nodes_per_boundary")
    @classmethod
    def even_nodes(cls, value: int) -> int:
        if value % 2:
            raise ValueError("must be even")
        return value

    @model_validator(mode="after")
    def nonempty_times(self) -> "RunConfig":
        if not self.times:
            raise ValueError("times: at least one snapshot time is required")
        return self


def _format_validation_error(error: ValidationError) -> str:
    """One line per offending key, dotted path first"""
    lines = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{key}: {item['msg']}")
    return "; ".join(lines)


def _set_dotted(data: Dict[str, Any], dotted: str, value: Any) -> None:
    target = data
    parts = dotted.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
    target[parts[-1]] = value


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read a JSON config file, apply dotted-key overrides and validate"""
    from honeycomb.errors import ConfigError

    data: Dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file '{path}' not found")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file '{path}' is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")

    if Config.LATTICE_CONSTANT and "lattice_constant" not in data:
        data["lattice_constant"] = float(Config.LATTICE_CONSTANT)

    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, key, value)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e))
