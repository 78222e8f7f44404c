"""Run configuration: plain-text files, unit conversion, validation.

Config files are ini-style sections of ``key = value`` pairs. Every physical
key carries its unit in its name (``dx_m``, ``viscosity_m2_per_s``), and all
lattice quantities are derived from the resolution pair (dx, dt). Validation
collects every violation before raising so a bad file is reported once,
completely.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .engine import EngineConfig
from .errors import ConfigurationError, StorageError

GEOMETRIES = (
    "box",
    "channel",
    "shear_box",
    "pipe",
    "curved_channel",
    "cone_plate",
    "pre_inlet_channel",
)

MAX_LATTICE_SPEED = 0.3
MAX_HAEMATOCRIT = 0.45


@dataclass(frozen=True)
class UnitSystem:
    """Bidirectional physical/lattice conversion anchored at (dx, dt)."""

    dx: float  # metres per lattice spacing
    dt: float  # seconds per time step

    def __post_init__(self):
        problems = []
        if not (self.dx > 0.0 and math.isfinite(self.dx)):
            problems.append(f"dx must be a positive length in metres, got {self.dx}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            problems.append(f"dt must be a positive time in seconds, got {self.dt}")
        if problems:
            raise ConfigurationError(problems)

    def length_to_lattice(self, metres: float) -> float:
        return metres / self.dx

    def length_from_lattice(self, nodes: float) -> float:
        return nodes * self.dx

    def time_to_lattice(self, seconds: float) -> float:
        return seconds / self.dt

    def time_from_lattice(self, steps: float) -> float:
        return steps * self.dt

    def velocity_to_lattice(self, m_per_s: float) -> float:
        return m_per_s * self.dt / self.dx

    def velocity_from_lattice(self, lattice: float) -> float:
        return lattice * self.dx / self.dt

    def viscosity_to_lattice(self, m2_per_s: float) -> float:
        return m2_per_s * self.dt / (self.dx * self.dx)

    def viscosity_from_lattice(self, lattice: float) -> float:
        return lattice * self.dx * self.dx / self.dt

    def shear_rate_to_lattice(self, per_s: float) -> float:
        return per_s * self.dt

    def shear_rate_from_lattice(self, lattice: float) -> float:
        return lattice / self.dt

    def acceleration_to_lattice(self, m_per_s2: float) -> float:
        return m_per_s2 * self.dt * self.dt / self.dx

    def acceleration_from_lattice(self, lattice: float) -> float:
        return lattice * self.dx / (self.dt * self.dt)


@dataclass
class SimulationConfig:
    """Everything a scenario needs, in physical units plus derived lattice values."""

    units: UnitSystem = field(default_factory=lambda: UnitSystem(0.5e-6, 1e-7))
    viscosity_m2_per_s: float = 1.2e-6
    body_acceleration_m_per_s2: float = 0.0
    geometry: str = "channel"
    size_x_um: float = 30.0
    size_y_um: float = 30.0
    size_z_um: float = 30.0
    radius_um: float = 12.0
    cone_angle_deg: float = 4.0
    shear_rate_per_s: float = 0.0
    haematocrit: float = 0.0
    rbc_count: int = -1  # -1 means derive from haematocrit
    platelet_count: int = 0
    stiffness_scale: float = 1.0
    stiff_fraction: float = 0.0
    seed: int = 0
    steps: int = 1000
    output_dir: str = "out"
    output_every: int = 1000
    engine: EngineConfig = field(default_factory=EngineConfig)

    # -- derived lattice quantities --

    @property
    def nu_lattice(self) -> float:
        return self.units.viscosity_to_lattice(self.viscosity_m2_per_s)

    @property
    def tau(self) -> float:
        return 3.0 * self.nu_lattice + 0.5

    @property
    def shape(self) -> tuple:
        to_nodes = 1e-6 / self.units.dx
        return (
            max(1, round(self.size_x_um * to_nodes)),
            max(1, round(self.size_y_um * to_nodes)),
            max(1, round(self.size_z_um * to_nodes)),
        )

    @property
    def radius_lattice(self) -> float:
        return self.units.length_to_lattice(self.radius_um * 1e-6)

    @property
    def shear_rate_lattice(self) -> float:
        return self.units.shear_rate_to_lattice(self.shear_rate_per_s)

    @property
    def body_force_lattice(self) -> float:
        return self.units.acceleration_to_lattice(self.body_acceleration_m_per_s2)

    @property
    def peak_lattice_speed(self) -> float:
        """Upper estimate of the fastest flow the setup can drive."""
        shape = self.shape
        half = 0.5 * min(shape[1], shape[2])
        speed = abs(self.shear_rate_lattice) * 2.0 * half
        if self.body_force_lattice != 0.0 and self.nu_lattice > 0.0:
            speed = max(
                speed,
                abs(self.body_force_lattice) * half * half / (2.0 * self.nu_lattice),
            )
        return speed

    def validate(self):
        problems = []
        if not (self.tau > 0.5):
            problems.append(
                f"relaxation time tau = {self.tau:.4f} must exceed 1/2; "
                "raise viscosity, shrink dt, or grow dx"
            )
        if self.geometry not in GEOMETRIES:
            problems.append(
                f"unknown geometry '{self.geometry}'; choose one of {', '.join(GEOMETRIES)}"
            )
        if not (0.0 <= self.haematocrit <= MAX_HAEMATOCRIT):
            problems.append(
                f"haematocrit {self.haematocrit} outside [0, {MAX_HAEMATOCRIT}]"
            )
        speed = self.peak_lattice_speed
        if speed >= MAX_LATTICE_SPEED:
            problems.append(
                f"estimated lattice speed {speed:.3f} exceeds {MAX_LATTICE_SPEED}; "
                "reduce shear rate or driving force, or shrink dt"
            )
        for name in ("size_x_um", "size_y_um", "size_z_um", "radius_um"):
            if getattr(self, name) <= 0.0:
                problems.append(f"{name} must be positive")
        if not (0.0 <= self.cone_angle_deg <= 45.0):
            problems.append("cone_angle_deg must lie in [0, 45] (0 is a flat disc)")
        if self.stiffness_scale <= 0.0:
            problems.append("stiffness_scale must be positive")
        if not (0.0 <= self.stiff_fraction <= 1.0):
            problems.append("stiff_fraction must lie in [0, 1]")
        if self.platelet_count < 0:
            problems.append("platelet_count must be >= 0")
        if self.steps < 0:
            problems.append("steps must be >= 0")
        if self.output_every < 1:
            problems.append("output_every must be >= 1")
        if problems:
            raise ConfigurationError(problems)
        return self

    def echo(self) -> str:
        """Human-readable recap of the derived lattice quantities."""
        shape = self.shape
        lines = [
            f"resolution: dx = {self.units.dx:.3e} m, dt = {self.units.dt:.3e} s",
            f"domain: {shape[0]} x {shape[1]} x {shape[2]} nodes "
            f"({self.size_x_um:g} x {self.size_y_um:g} x {self.size_z_um:g} um)",
            f"kinematic viscosity: {self.viscosity_m2_per_s:.3e} m2/s -> "
            f"{self.nu_lattice:.4f} lattice, tau = {self.tau:.4f}",
        ]
        if self.shear_rate_per_s != 0.0:
            lines.append(
                f"shear rate: {self.shear_rate_per_s:g} 1/s -> "
                f"{self.shear_rate_lattice:.3e} per step"
            )
        if self.body_acceleration_m_per_s2 != 0.0:
            lines.append(
                f"body acceleration: {self.body_acceleration_m_per_s2:g} m/s2 -> "
                f"{self.body_force_lattice:.3e} lattice"
            )
        lines.append(f"estimated peak lattice speed: {self.peak_lattice_speed:.4f}")
        if self.haematocrit > 0.0 or self.rbc_count >= 0:
            cells = (
                f"{self.rbc_count} RBCs"
                if self.rbc_count >= 0
                else f"haematocrit {self.haematocrit:.3f}"
            )
            lines.append(
                f"cells: {cells}, {self.platelet_count} platelets, "
                f"stiffness x{self.stiffness_scale:g} on {self.stiff_fraction:.0%}"
            )
        return "\n".join(lines)


# --- parsing -----------------------------------------------------------------

_FLOAT_KEYS = {
    ("units", "dx_m"),
    ("units", "dt_s"),
    ("fluid", "viscosity_m2_per_s"),
    ("fluid", "body_acceleration_m_per_s2"),
    ("domain", "size_x_um"),
    ("domain", "size_y_um"),
    ("domain", "size_z_um"),
    ("domain", "radius_um"),
    ("domain", "cone_angle_deg"),
    ("domain", "shear_rate_per_s"),
    ("cells", "haematocrit"),
    ("cells", "stiffness_scale"),
    ("cells", "stiff_fraction"),
    ("engine", "imbalance_threshold"),
    ("engine", "cost_fluid"),
    ("engine", "cost_vertex"),
    ("engine", "repulsion_strength"),
    ("engine", "repulsion_cutoff"),
}

_INT_KEYS = {
    ("cells", "rbc_count"),
    ("cells", "platelet_count"),
    ("cells", "seed"),
    ("output", "steps"),
    ("output", "every"),
    ("engine", "separation_ratio"),
    ("engine", "max_separation"),
    ("engine", "rebalance_every"),
    ("engine", "checkpoint_every"),
    ("engine", "workers"),
    ("engine", "n_blocks"),
}

_BOOL_KEYS = {
    ("engine", "adaptive_separation"),
}

_STR_KEYS = {
    ("domain", "geometry"),
    ("output", "directory"),
    ("engine", "integrator"),
}

_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _BOOL_KEYS | _STR_KEYS

# (section, key) -> SimulationConfig attribute; engine keys map into EngineConfig
_FIELD_OF = {
    ("fluid", "viscosity_m2_per_s"): "viscosity_m2_per_s",
    ("fluid", "body_acceleration_m_per_s2"): "body_acceleration_m_per_s2",
    ("domain", "geometry"): "geometry",
    ("domain", "size_x_um"): "size_x_um",
    ("domain", "size_y_um"): "size_y_um",
    ("domain", "size_z_um"): "size_z_um",
    ("domain", "radius_um"): "radius_um",
    ("domain", "cone_angle_deg"): "cone_angle_deg",
    ("domain", "shear_rate_per_s"): "shear_rate_per_s",
    ("cells", "haematocrit"): "haematocrit",
    ("cells", "rbc_count"): "rbc_count",
    ("cells", "platelet_count"): "platelet_count",
    ("cells", "seed"): "seed",
    ("cells", "stiffness_scale"): "stiffness_scale",
    ("cells", "stiff_fraction"): "stiff_fraction",
    ("output", "steps"): "steps",
    ("output", "directory"): "output_dir",
    ("output", "every"): "output_every",
}

_TRUTHY = {"1": True, "true": True, "yes": True, "on": True,
           "0": False, "false": False, "no": False, "off": False}


def _parse_value(section, key, raw, problems):
    pair = (section, key)
    if pair in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            problems.append(f"[{section}] {key}: cannot parse '{raw}' as a number")
    elif pair in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            problems.append(f"[{section}] {key}: cannot parse '{raw}' as an integer")
    elif pair in _BOOL_KEYS:
        flag = _TRUTHY.get(raw.strip().lower())
        if flag is None:
            problems.append(f"[{section}] {key}: cannot parse '{raw}' as true/false")
        return flag
    else:
        return raw.strip()
    return None


def parse_override(text: str):
    """Split one ``section.key=value`` command-line override."""
    head, sep, value = text.partition("=")
    section, dot, key = head.strip().partition(".")
    if not sep or not dot or not section or not key.strip():
        raise ConfigurationError(
            f"override '{text}' must look like section.key=value"
        )
    return section.strip(), key.strip(), value.strip()


def _build(pairs):
    """Assemble a validated SimulationConfig from (section, key) -> raw text."""
    problems = []
    values = {}
    for (section, key), raw in pairs.items():
        if (section, key) not in _ALL_KEYS:
            problems.append(f"unknown key '{key}' in section [{section}]")
            continue
        parsed = _parse_value(section, key, raw, problems)
        if parsed is not None:
            values[(section, key)] = parsed

    if problems:
        raise ConfigurationError(problems)

    units = UnitSystem(
        values.pop(("units", "dx_m"), 0.5e-6),
        values.pop(("units", "dt_s"), 1e-7),
    )
    engine_kwargs = {
        key: value
        for (section, key), value in values.items()
        if section == "engine"
    }
    engine = EngineConfig(**engine_kwargs)
    config = SimulationConfig(units=units, engine=engine)
    for pair, value in values.items():
        if pair[0] == "engine":
            continue
        setattr(config, _FIELD_OF[pair], value)
    return config.validate()


def load_config(path, overrides=()) -> SimulationConfig:
    """Parse, override, validate; every violation is reported in one error."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise StorageError(f"cannot read config file: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError([f"malformed config file: {exc}"]) from exc

    pairs = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            pairs[(section.strip().lower(), key.strip().lower())] = raw
    for text in overrides:
        section, key, value = parse_override(text)
        pairs[(section.lower(), key.lower())] = value
    return _build(pairs)


def default_config(**replacements) -> SimulationConfig:
    """Fresh config with defaults, optionally overriding dataclass fields."""
    config = SimulationConfig()
    for name, value in replacements.items():
        if not hasattr(config, name):
            raise ConfigurationError(f"unknown config field '{name}'")
        setattr(config, name, value)
    return config.validate()
