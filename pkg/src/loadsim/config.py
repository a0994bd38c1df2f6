"""Model configuration: soil, pile, machine, control constants and action grids.

All specification types are frozen dataclasses so they can be shared freely
between worker processes.  Angles are stored in degrees, everything else in SI
units unless the field name says otherwise (``cohesion`` is in kPa).
"""

from __future__ import annotations

import contextlib
import gc
import hashlib
import itertools
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

import yaml

SCHEMA_VERSION = 1
KMH = 1.0 / 3.6


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration input."""


class ValidationError(ConfigError):
    """A value violates the invariants of its specification type."""

    def __init__(self, message: str, alpha_index: int | None = None):
        super().__init__(message)
        self.alpha_index = alpha_index


@dataclass(frozen=True)
class SoilSpec:
    name: str
    phi_internal: float  # deg
    psi_dilatancy: float  # deg, carried but unused by the resistance model
    cohesion: float  # kPa
    density: float  # kg/m^3

    def __post_init__(self):
        if not 0.0 < self.phi_internal < 90.0:
            raise ValidationError(f"{self.name}: phi_internal must lie in (0, 90) deg")
        if not 0.0 <= self.psi_dilatancy < self.phi_internal:
            raise ValidationError(f"{self.name}: psi_dilatancy must lie in [0, phi_internal)")
        if self.cohesion < 0.0:
            raise ValidationError(f"{self.name}: cohesion must be >= 0")
        if self.density <= 0.0:
            raise ValidationError(f"{self.name}: density must be > 0")

    @property
    def cohesion_pa(self) -> float:
        return self.cohesion * 1e3


SOILS: dict[str, SoilSpec] = {
    "gravel": SoilSpec("gravel", 44.0, 11.0, 0.0, 1400.0),
    "sand": SoilSpec("sand", 39.0, 9.0, 0.0, 1400.0),
    "dirt": SoilSpec("dirt", 40.0, 13.0, 2.1, 1400.0),
}


@dataclass(frozen=True)
class PileSpec:
    soil: SoilSpec
    slope: float  # deg
    toe_x: float = 10.0
    crest_height: float = 3.0
    grid_dx: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.slope < 90.0:
            raise ValidationError("pile slope must lie in (0, 90) deg")
        if self.grid_dx <= 0.0:
            raise ValidationError("grid_dx must be > 0")
        if self.crest_height <= 0.0:
            raise ValidationError("crest_height must be > 0")
        if self.toe_x < 0.0:
            raise ValidationError("toe_x must be >= 0")

    @property
    def name(self) -> str:
        return f"{self.soil.name}-{self.slope:g}"

    @property
    def key(self) -> str:
        s = self.soil
        return (
            f"{s.name}:{s.phi_internal!r}:{s.psi_dilatancy!r}:{s.cohesion!r}:{s.density!r}"
            f"|{self.slope!r}|{self.toe_x!r}|{self.crest_height!r}|{self.grid_dx!r}"
        )

    @property
    def ramp_length(self) -> float:
        return self.crest_height / math.tan(math.radians(self.slope))


@dataclass(frozen=True)
class MachineSpec:
    """Planar wheel loader.

    Cylinder limits from the actuator table are kept in their linear units and
    mapped to angular joint limits through ``lever_arm``.
    """

    operating_mass: float = 15590.0
    wheelbase: float = 3.030
    bucket_capacity: float = 3.0
    bucket_width: float = 2.7
    wheel_radius: float = 0.65
    wheel_friction: float = 0.8
    drive_speed_range: tuple[float, float] = (0.0, 11.0 * KMH)
    drive_torque_limit: float = 85e3
    lift_speed_range: tuple[float, float] = (-0.2, 0.11)
    lift_force_limit: float = 395e3
    tilt_speed_range: tuple[float, float] = (-0.2, 0.1)
    tilt_force_limit: float = 530e3
    lever_arm: float = 0.5
    boom_pivot: tuple[float, float] = (-1.0, 1.2)  # relative to the front axle
    boom_length: float = 2.2
    bucket_tip_offset: float = 1.2
    boom_mass: float = 1200.0
    bucket_mass: float = 1300.0
    boom_angle_range: tuple[float, float] = (-50.0, 50.0)  # deg
    bucket_angle_range: tuple[float, float] = (-20.0, 60.0)  # deg
    drive_gain: float = 60e3  # N per m/s
    joint_gain: float = 800e3  # Nm per rad/s
    rolling_resistance: float = 0.03
    fill_window: float = 2.0  # m of surface ahead of the edge that confines the cut
    fill_exponent: float = 2.0
    heap_factor: float = 1.05  # overfill held while the soil still supports the heap

    def __post_init__(self):
        positive = (
            "operating_mass", "wheelbase", "bucket_capacity", "bucket_width",
            "wheel_radius", "drive_torque_limit", "lift_force_limit",
            "tilt_force_limit", "lever_arm", "boom_length", "bucket_tip_offset",
            "boom_mass", "bucket_mass", "drive_gain", "joint_gain",
        )
        for name in positive:
            if not getattr(self, name) > 0.0:
                raise ValidationError(f"machine.{name} must be > 0")
        if not 0.0 < self.wheel_friction < 2.0:
            raise ValidationError("machine.wheel_friction must lie in (0, 2)")
        if self.fill_window < 0.0 or self.fill_exponent < 0.0:
            raise ValidationError("machine.fill_window and machine.fill_exponent must be >= 0")
        if self.heap_factor < 1.0:
            raise ValidationError("machine.heap_factor must be >= 1")
        if self.rolling_resistance < 0.0:
            raise ValidationError("machine.rolling_resistance must be >= 0")
        for name in ("drive_speed_range", "lift_speed_range", "tilt_speed_range",
                     "boom_angle_range", "bucket_angle_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValidationError(f"machine.{name} must be an increasing pair")

    @property
    def drive_speed_max(self) -> float:
        return self.drive_speed_range[1]

    @property
    def traction_limit(self) -> float:
        """Largest longitudinal force the wheels can deliver [N]."""
        return min(self.drive_torque_limit / self.wheel_radius,
                   self.wheel_friction * self.operating_mass * 9.81)

    @property
    def lift_torque_limit(self) -> float:
        return self.lift_force_limit * self.lever_arm

    @property
    def tilt_torque_limit(self) -> float:
        return self.tilt_force_limit * self.lever_arm

    @property
    def lift_omega_range(self) -> tuple[float, float]:
        lo, hi = self.lift_speed_range
        return lo / self.lever_arm, hi / self.lever_arm

    @property
    def tilt_omega_range(self) -> tuple[float, float]:
        lo, hi = self.tilt_speed_range
        return lo / self.lever_arm, hi / self.lever_arm

    def digest(self) -> str:
        return hashlib.sha256(repr(sorted(asdict(self).items())).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ControlConstants:
    v_drive_max: float = 11.0 * KMH  # m/s
    v_lift_max: float = 0.11  # m/s, cylinder
    v_tilt_max: float = 0.10  # m/s, cylinder
    F_dig0: float = 100e3  # N
    reverse_fraction: float = 0.6
    brake_duration: float = 1.0  # s
    bucket_end_angle: float = 50.0  # deg
    boom_end_angle: float = -10.0  # deg
    reverse_distance: float = 5.0  # m
    dt: float = 0.010  # s
    # invented thresholds for contact, breakout, stall and the watchdog
    contact_force: float = 1e3
    contact_gap: float = 0.05
    breakout_hysteresis: float = 1e-3
    stall_speed: float = 0.01
    stall_omega: float = 0.005
    stall_dwell: float = 2.0
    timeout: float = 120.0
    approach_gap: float = 8.0  # initial front axle distance to the pile toe

    def __post_init__(self):
        for f in fields(self):
            if f.name == "boom_end_angle":
                continue
            if not getattr(self, f.name) > 0.0:
                raise ValidationError(f"control.{f.name} must be > 0")
        if not self.reverse_fraction <= 1.0:
            raise ValidationError("control.reverse_fraction must be <= 1")

    @property
    def brake_steps(self) -> int:
        return int(round(self.brake_duration / self.dt))


@dataclass(frozen=True)
class ActionParams:
    """One loading action: eight control parameters.

    ``alpha7`` and ``alpha8`` are the boom and bucket target angles in degrees.
    """

    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    alpha5: float
    alpha6: float
    alpha7: float
    alpha8: float

    def __post_init__(self):
        for i, value in enumerate(self.as_tuple(), start=1):
            check_alpha(i, value)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.alpha1, self.alpha2, self.alpha3, self.alpha4,
                self.alpha5, self.alpha6, self.alpha7, self.alpha8)

    @property
    def key(self) -> str:
        return ",".join(repr(float(a)) for a in self.as_tuple())

    @classmethod
    def _trusted(cls, values: tuple[float, ...]) -> "ActionParams":
        # bulk construction of already-validated values
        obj = object.__new__(cls)
        obj.__dict__.update(zip(ALPHA_NAMES, values))
        return obj

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "ActionParams":
        if len(values) != 8:
            raise ConfigError(f"expected 8 action parameters, got {len(values)}")
        return cls(*(float(v) for v in values))


ALPHA_NAMES = tuple(f"alpha{i}" for i in range(1, 9))

# Table values as written; floats parsed from these strings repr back identically.
GRID_LEVELS: tuple[tuple[str, ...], ...] = (
    ("0.4", "0.6", "0.8"),
    ("0.2", "0.4", "0.6"),
    ("0.0", "0.3", "0.6", "0.9", "1.2"),
    ("0.0", "0.3", "0.6", "0.9", "1.2"),
    ("0.2", "0.4", "0.6", "0.8", "1.0"),
    ("0.2", "0.4", "0.6", "0.8", "1.0"),
    ("-40", "-30", "-20", "-10"),
    ("30", "45"),
)


def reference_grid_values() -> list[list[float]]:
    return [[float(v) for v in row] for row in GRID_LEVELS]


@contextlib.contextmanager
def _gc_paused():
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def check_alpha(index: int, value: float) -> None:
    """Raise ValidationError if ``value`` is outside the range of alpha ``index`` (1-based)."""
    if not math.isfinite(value):
        raise ValidationError(f"alpha{index} must be finite", index)
    if index in (1, 2, 5, 6):
        ok = 0.0 < value <= 1.0
    elif index in (3, 4):
        ok = 0.0 <= value <= 1.2
    elif index == 7:
        ok = -40.0 <= value <= -10.0
    elif index == 8:
        ok = 0.0 < value <= 60.0
    else:
        raise ValidationError(f"no alpha{index}", index)
    if not ok:
        raise ValidationError(f"alpha{index} = {value!r} out of range", index)


def build_parameter_grid(values_per_alpha: Sequence[Sequence[float]]) -> list[ActionParams]:
    """Full Cartesian product of per-parameter value lists, alpha1 slowest-varying."""
    if len(values_per_alpha) != 8:
        raise ConfigError(f"need 8 value lists, got {len(values_per_alpha)}")
    lists = []
    for i, values in enumerate(values_per_alpha, start=1):
        if len(values) == 0:
            raise ConfigError(f"value list for alpha{i} is empty")
        vals = [float(v) for v in values]
        for v in vals:
            check_alpha(i, v)
        lists.append(vals)
    with _gc_paused():
        grid = [ActionParams._trusted(combo) for combo in itertools.product(*lists)]
    return grid


class ManifestRow(NamedTuple):
    run_id: str
    pile_id: str
    action: ActionParams

    @property
    def seed(self) -> int:
        """Reserved for stochastic soil variants; the physics is deterministic."""
        return seed_from_run_id(self.run_id)


@dataclass(frozen=True)
class CampaignManifest:
    piles: dict[str, PileSpec]
    rows: tuple[ManifestRow, ...]
    machine_hash: str = ""
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.rows)

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.schema_version}|{self.machine_hash}".encode())
        for row in self.rows:
            h.update(f"\n{row.run_id}".encode())
        return h.hexdigest()

    def subset(self, run_ids: Iterable[str]) -> "CampaignManifest":
        keep = set(run_ids)
        return replace(self, rows=tuple(r for r in self.rows if r.run_id in keep))


def make_run_id(pile: PileSpec, action: ActionParams) -> str:
    return hashlib.blake2b(f"{pile.key}#{action.key}".encode(), digest_size=8).hexdigest()


def seed_from_run_id(run_id: str) -> int:
    return int(run_id[:8], 16)


def enumerate_campaign(piles: Sequence[PileSpec], grid: Sequence[ActionParams],
                       machine: MachineSpec | None = None) -> CampaignManifest:
    if not piles:
        raise ConfigError("campaign needs at least one pile")
    if not grid:
        raise ConfigError("campaign needs a non-empty action grid")
    by_name: dict[str, PileSpec] = {}
    for pile in piles:
        if pile.name in by_name:
            raise ConfigError(f"duplicate pile name {pile.name!r}")
        by_name[pile.name] = pile
    action_keys = [a.key.encode() for a in grid]
    rows: list[ManifestRow] = []
    append = rows.append
    with _gc_paused():
        for pile in piles:
            base = hashlib.blake2b(f"{pile.key}#".encode(), digest_size=8)
            name = pile.name
            for action, akey in zip(grid, action_keys):
                h = base.copy()
                h.update(akey)
                append(ManifestRow(h.hexdigest(), name, action))
    machine_hash = (machine or MachineSpec()).digest()
    return CampaignManifest(by_name, tuple(rows), machine_hash)


REFERENCE_PILES = ("gravel-10", "gravel-20", "gravel-30", "gravel-40", "sand-30", "dirt-30")


@dataclass(frozen=True)
class ResolvedConfig:
    soils: dict[str, SoilSpec]
    machine: MachineSpec = field(default_factory=MachineSpec)
    control: ControlConstants = field(default_factory=ControlConstants)
    toe_x: float = 10.0
    crest_height: float = 3.0
    grid_dx: float = 0.2
    grid_values: tuple[tuple[float, ...], ...] = tuple(tuple(r) for r in reference_grid_values())

    def pile(self, pile_id: str) -> PileSpec:
        """Resolve ``"<soil>-<slope>"`` into a PileSpec."""
        soil_name, sep, slope = pile_id.rpartition("-")
        if not sep or soil_name not in self.soils:
            raise ConfigError(f"unknown pile {pile_id!r}; expected <soil>-<slope>, "
                              f"soils: {sorted(self.soils)}")
        try:
            slope_deg = float(slope)
        except ValueError:
            raise ConfigError(f"bad slope in pile id {pile_id!r}") from None
        return PileSpec(self.soils[soil_name], slope_deg, self.toe_x,
                        self.crest_height, self.grid_dx)

    def piles(self, spec: str) -> list[PileSpec]:
        """Parse a comma separated pile list; ``reference`` expands to the six reference piles."""
        ids: list[str] = []
        for token in spec.split(","):
            token = token.strip()
            if not token:
                continue
            ids.extend(REFERENCE_PILES if token == "reference" else [token])
        if not ids:
            raise ConfigError("empty pile list")
        return [self.pile(i) for i in ids]

    def grid(self) -> list[ActionParams]:
        return build_parameter_grid(self.grid_values)


_TOP_KEYS = {"schema_version", "soils", "machine", "control", "pile", "grid"}
_SOIL_KEYS = {"phi_internal", "psi_dilatancy", "cohesion", "density"}
_PILE_KEYS = {"toe_x", "crest_height", "grid_dx"}


def _check_keys(section: str, data: Mapping[str, Any], allowed: Iterable[str]) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


def _number(section: str, key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    return float(value)


def _section(doc: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    sec = doc.get(name) or {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"section {name!r} must be a mapping")
    return sec


def validate_config(document: str | Mapping[str, Any] | None) -> ResolvedConfig:
    """Parse and validate a YAML configuration document.

    Missing sections fall back to the built-in defaults; unknown keys are
    rejected.  Custom soils may be declared under ``soils`` and referenced by
    name; a soil entry whose name matches a built-in soil must be complete.
    """
    if document is None or isinstance(document, str):
        try:
            doc = yaml.safe_load(document or "") or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise ConfigError("config root must be a mapping")
    _check_keys("config", doc, _TOP_KEYS)
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}")

    soils = dict(SOILS)
    for name, entry in _section(doc, "soils").items():
        if not isinstance(entry, Mapping):
            raise ConfigError(f"soils.{name} must be a mapping")
        _check_keys(f"soils.{name}", entry, _SOIL_KEYS)
        missing = _SOIL_KEYS - set(entry)
        if missing:
            raise ConfigError(f"soils.{name} missing required key(s) {sorted(missing)}")
        soils[name] = SoilSpec(str(name), *(
            _number(f"soils.{name}", k, entry[k])
            for k in ("phi_internal", "psi_dilatancy", "cohesion", "density")))

    machine_kw: dict[str, Any] = {}
    machine_fields = {f.name: f for f in fields(MachineSpec)}
    msec = _section(doc, "machine")
    _check_keys("machine", msec, machine_fields)
    for key, value in msec.items():
        if isinstance(getattr(MachineSpec, key, None), tuple) or isinstance(
                MachineSpec.__dataclass_fields__[key].default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ConfigError(f"machine.{key} must be a pair")
            machine_kw[key] = tuple(_number("machine", key, v) for v in value)
        else:
            machine_kw[key] = _number("machine", key, value)
    machine = MachineSpec(**machine_kw)

    csec = _section(doc, "control")
    control_fields = {f.name for f in fields(ControlConstants)} | {"v_drive_max_kmh"}
    _check_keys("control", csec, control_fields)
    control_kw = {k: _number("control", k, v) for k, v in csec.items()}
    if "v_drive_max_kmh" in control_kw:
        if "v_drive_max" in control_kw:
            raise ConfigError("give control.v_drive_max or control.v_drive_max_kmh, not both")
        control_kw["v_drive_max"] = control_kw.pop("v_drive_max_kmh") * KMH
    control = ControlConstants(**control_kw)

    psec = _section(doc, "pile")
    _check_keys("pile", psec, _PILE_KEYS)
    pile_kw = {k: _number("pile", k, v) for k, v in psec.items()}
    for key in ("crest_height", "grid_dx"):
        if key in pile_kw and pile_kw[key] <= 0.0:
            raise ValidationError(f"pile.{key} must be > 0")

    gsec = _section(doc, "grid")
    _check_keys("grid", gsec, ALPHA_NAMES)
    grid_values = [list(r) for r in reference_grid_values()]
    for key, values in gsec.items():
        idx = ALPHA_NAMES.index(key)
        if not isinstance(values, list):
            values = [values]
        grid_values[idx] = [_number("grid", key, v) for v in values]
    # validates ranges and emptiness
    for i, values in enumerate(grid_values, start=1):
        if not values:
            raise ConfigError(f"grid.alpha{i} is empty")
        for v in values:
            check_alpha(i, v)

    return ResolvedConfig(soils=soils, machine=machine, control=control,
                          grid_values=tuple(tuple(v) for v in grid_values), **pile_kw)


def load_config(path: str | Path | None) -> ResolvedConfig:
    if path is None:
        return validate_config(None)
    text = Path(path).read_text(encoding="utf-8")
    return validate_config(text)
