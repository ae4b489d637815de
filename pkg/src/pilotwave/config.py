"""Scenario configuration: YAML documents mapped onto frozen dataclass sections.

Unknown keys are rejected and a missing required key is reported by its dotted
path, so a typo never silently falls back to a default.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, InvalidExtent
from .grid import Units, make_grid

SCENARIOS = ("free-packet", "harmonic", "double-slit", "stern-gerlach", "contextuality",
             "pov-pipeline", "conditional", "lln", "equivariance")
POTENTIALS = ("free", "harmonic", "double-slit")
INITIAL_KINDS = ("gaussian", "superposition", "ground-state")


def _complex(x, where: str) -> complex:
    try:
        if isinstance(x, (list, tuple)) and len(x) == 2:
            return complex(float(x[0]), float(x[1]))
        return complex(str(x).replace(" ", "")) if isinstance(x, str) else complex(x)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {x!r} as a complex number "
                          f"(use a number, 'a+bj', or [re, im])") from None


def _floats(x, where: str) -> tuple[float, ...]:
    vals = x if isinstance(x, (list, tuple)) else [x]
    try:
        return tuple(float(v) for v in vals)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number or list of numbers, got {x!r}") from None


def _require(cond: bool, where: str, constraint: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: must satisfy {constraint}")


@dataclass(frozen=True)
class GridSection:
    extents: tuple  # ((lower, upper, points), ...)

    def __post_init__(self):
        ext = self.extents
        _require(isinstance(ext, (list, tuple)) and len(ext) > 0, "grid.extents",
                 "a non-empty list of [lower, upper, points]")
        rows = []
        for i, row in enumerate(ext):
            _require(isinstance(row, (list, tuple)) and len(row) == 3, f"grid.extents[{i}]",
                     "form [lower, upper, points]")
            try:
                make_grid([(float(row[0]), float(row[1]), int(row[2]))])
            except InvalidExtent as exc:
                raise ConfigError(f"grid.extents[{i}]: {exc}") from None
            rows.append((float(row[0]), float(row[1]), int(row[2])))
        object.__setattr__(self, "extents", tuple(rows))


@dataclass(frozen=True)
class ParticleSection:
    mu: typing.Any = None  # naturalized mass m / hbar, scalar or per axis (default 1)
    mass: typing.Any = None  # alternatively a mass in the units of hbar below
    hbar: float = 1.0

    def __post_init__(self):
        _require(self.mu is None or self.mass is None, "particle", "give either mu or mass, not both")
        _require(self.hbar > 0, "particle.hbar", "hbar > 0")
        if self.mass is not None:
            m = _floats(self.mass, "particle.mass")
            _require(all(v > 0 for v in m), "particle.mass", "mass > 0")
            object.__setattr__(self, "mass", m[0] if len(m) == 1 else m)
            return
        mu = _floats(1.0 if self.mu is None else self.mu, "particle.mu")
        _require(all(m > 0 for m in mu), "particle.mu", "mu > 0")
        object.__setattr__(self, "mu", mu[0] if len(mu) == 1 else mu)

    def units(self) -> Units:
        """Internal units are naturalized (hbar = 1); masses are converted here."""
        if self.mass is not None:
            return Units.from_masses(self.mass, self.hbar)
        return Units(self.mu)


@dataclass(frozen=True)
class PotentialSection:
    kind: str = "free"
    omega: float = 1.0  # harmonic
    barrier_height: float = 60.0  # double-slit, barrier across the last axis
    barrier_center: float = 0.0
    barrier_thickness: float = 0.5
    slit_separation: float = 4.0
    slit_width: float = 1.0

    def __post_init__(self):
        _require(self.kind in POTENTIALS, "potential.kind", f"one of {POTENTIALS}")
        _require(self.omega > 0, "potential.omega", "omega > 0")


@dataclass(frozen=True)
class PacketSection:
    center: typing.Any = 0.0
    sigma: typing.Any = 1.0  # width of |psi|^2 per axis
    k: typing.Any = 0.0
    weight: typing.Any = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", _floats(self.center, "packet.center"))
        object.__setattr__(self, "sigma", _floats(self.sigma, "packet.sigma"))
        object.__setattr__(self, "k", _floats(self.k, "packet.k"))
        object.__setattr__(self, "weight", _complex(self.weight, "packet.weight"))
        _require(all(s > 0 for s in self.sigma), "packet.sigma", "sigma > 0")


@dataclass(frozen=True)
class InitialSection:
    kind: str = "gaussian"
    center: typing.Any = 0.0
    sigma: typing.Any = 1.0
    k: typing.Any = 0.0
    components: tuple = field(default=(), metadata={"item": PacketSection})
    spinor: typing.Any = None  # [a, b]

    def __post_init__(self):
        _require(self.kind in INITIAL_KINDS, "initial.kind", f"one of {INITIAL_KINDS}")
        object.__setattr__(self, "center", _floats(self.center, "initial.center"))
        object.__setattr__(self, "sigma", _floats(self.sigma, "initial.sigma"))
        object.__setattr__(self, "k", _floats(self.k, "initial.k"))
        _require(all(s > 0 for s in self.sigma), "initial.sigma", "sigma > 0")
        if self.kind == "superposition":
            _require(len(self.components) > 0, "initial.components",
                     "at least one packet for kind 'superposition'")
        if self.spinor is not None:
            _require(isinstance(self.spinor, (list, tuple)) and len(self.spinor) == 2,
                     "initial.spinor", "a pair [a, b]")
            s = tuple(_complex(c, "initial.spinor") for c in self.spinor)
            _require(abs(s[0]) + abs(s[1]) > 0, "initial.spinor", "a nonzero spinor")
            object.__setattr__(self, "spinor", s)

    def packets(self) -> tuple[PacketSection, ...]:
        if self.kind == "superposition":
            return self.components
        return (PacketSection(self.center, self.sigma, self.k, 1.0),)


@dataclass(frozen=True)
class EnsembleSection:
    size: int = 1000

    def __post_init__(self):
        _require(int(self.size) == self.size and self.size >= 0, "ensemble.size", "an integer >= 0")


@dataclass(frozen=True)
class PropagatorSection:
    method: str = "split"
    dt: float = 0.01
    tol: float = 1e-13
    max_iter: int = 500

    def __post_init__(self):
        _require(self.method in ("split", "cn"), "propagator.method", "one of ('split', 'cn')")
        _require(self.dt > 0, "propagator.dt", "dt > 0")
        _require(0 < self.tol <= 1e-10, "propagator.tol", "0 < tol <= 1e-10")


@dataclass(frozen=True)
class IntegratorSection:
    dt_traj: float = 0.04
    scheme: str = "rk4"
    interp_order: int = 1
    eps_rho: float = 1e-12

    def __post_init__(self):
        _require(self.dt_traj > 0, "integrator.dt_traj", "dt_traj > 0")
        _require(self.scheme in ("rk4", "midpoint"), "integrator.scheme", "one of ('rk4', 'midpoint')")
        _require(self.interp_order in (1, 3), "integrator.interp_order", "1 or 3")


@dataclass(frozen=True)
class RunSection:
    t_final: typing.Any = None  # default depends on the scenario
    periods: float = 10.0  # harmonic: duration in oscillator periods

    def __post_init__(self):
        if self.t_final is not None:
            _require(float(self.t_final) > 0, "run.t_final", "t_final > 0")


@dataclass(frozen=True)
class MagnetSection:
    coupling: float = 1.0
    B0: float = 1.0
    B1: float = 5.0
    interaction_time: float = 1.0
    readout_time: float = 3.0
    orientation: int = 1
    detector_plane: float = 0.0
    n_initial: int = 100  # contextuality: number of initial positions

    def __post_init__(self):
        _require(self.orientation in (1, -1), "magnet.orientation", "1 or -1")
        _require(self.coupling >= 0, "magnet.coupling", "coupling >= 0")


@dataclass(frozen=True)
class MeasurementSection:
    pointer_extent: tuple = (-24.0, 24.0, 256)
    pointer_sigma: float = 0.5
    shift: float = 8.0
    boundary: float = 0.0  # outcome regions are x < boundary and x >= boundary
    n_rerun: int = 1000
    basis_size: int = 8

    def __post_init__(self):
        pe = self.pointer_extent
        _require(isinstance(pe, (list, tuple)) and len(pe) == 3, "measurement.pointer_extent",
                 "form [lower, upper, points]")
        object.__setattr__(self, "pointer_extent", (float(pe[0]), float(pe[1]), int(pe[2])))
        _require(self.pointer_sigma > 0, "measurement.pointer_sigma", "pointer_sigma > 0")
        _require(self.basis_size >= 2, "measurement.basis_size", "basis_size >= 2")


@dataclass(frozen=True)
class ConditionalSection:
    correlation: float = 1.0  # Psi ~ exp(-(x - c y)^2 / 2 wx^2 - y^2 / 2 wy^2)
    x_width: float = 1.0
    y_width: float = 1.0
    y_range: tuple = (-1.0, 1.0)
    y_bin: float = 0.1
    x_bin: float = 0.5
    samples: int = 100_000
    min_count: int = 100

    def __post_init__(self):
        object.__setattr__(self, "y_range", _floats(self.y_range, "conditional.y_range"))
        _require(len(self.y_range) == 2 and self.y_range[0] < self.y_range[1],
                 "conditional.y_range", "[low, high] with low < high")
        _require(self.y_bin > 0 and self.x_bin > 0, "conditional.y_bin/x_bin", "bin widths > 0")


@dataclass(frozen=True)
class LLNSection:
    M: int = 10_000
    edges: typing.Any = (0.0,)
    seeds: int = 20
    min_within: int = 19

    def __post_init__(self):
        object.__setattr__(self, "edges", _floats(self.edges, "lln.edges"))
        _require(self.M > 0, "lln.M", "M > 0")
        _require(0 < self.min_within <= self.seeds, "lln.min_within", "0 < min_within <= seeds")


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    snapshot_stride: int = 0  # every k-th recorded frame goes to fields.json; 0 disables
    trajectory_stride: int = 1  # record every k-th trajectory step
    histogram_bins: int = 64

    def __post_init__(self):
        _require(self.snapshot_stride >= 0, "output.snapshot_stride", "snapshot_stride >= 0")
        _require(self.trajectory_stride >= 1, "output.trajectory_stride", "trajectory_stride >= 1")


@dataclass(frozen=True)
class ChecksSection:
    fatal: bool = True
    tolerances: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int
    grid: GridSection
    particle: ParticleSection = ParticleSection()
    potential: PotentialSection = PotentialSection()
    initial: InitialSection = InitialSection()
    ensemble: EnsembleSection = EnsembleSection()
    propagator: PropagatorSection = PropagatorSection()
    integrator: IntegratorSection = IntegratorSection()
    run: RunSection = RunSection()
    magnet: MagnetSection = MagnetSection()
    measurement: MeasurementSection = MeasurementSection()
    conditional: ConditionalSection = ConditionalSection()
    lln: LLNSection = LLNSection()
    output: OutputSection = OutputSection()
    checks: ChecksSection = ChecksSection()

    def __post_init__(self):
        _require(self.scenario in SCENARIOS, "scenario", f"one of {SCENARIOS}")
        _require(isinstance(self.seed, int) and not isinstance(self.seed, bool) and self.seed >= 0,
                 "seed", "a non-negative integer")

    def digest(self) -> str:
        """sha256 of the canonical parameters; the output directory is excluded."""
        d = to_dict(self)
        d["output"].pop("dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"unknown key {where + '.' if where else ''}{key!r}; "
                              f"allowed keys are {sorted(fields)}")
    kwargs = {}
    for name, f in fields.items():
        path = f"{where}.{name}" if where else name
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"missing required key {path!r}")
            continue
        value = data[name]
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            value = _build(tp, value or {}, path)
        elif "item" in f.metadata:
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            value = tuple(_build(f.metadata["item"], v, f"{path}[{i}]") for i, v in enumerate(value))
        elif tp in (float, int, str, bool):
            value = _coerce(value, tp, path)
        elif tp is dict and not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _coerce(value, tp, path):
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            try:
                return float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{path}: expected a number, got {value!r}") from None
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def parse_config(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return parse_config(data if data is not None else {})


def to_dict(cfg) -> dict:
    def conv(x):
        if isinstance(x, complex):
            return [x.real, x.imag]
        if isinstance(x, (list, tuple)):
            return [conv(v) for v in x]
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        return x

    return conv(dataclasses.asdict(cfg))
