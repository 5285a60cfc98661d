"""Ground-truth pipe geometry and the scenario file that produces it.

Coordinates: ``z`` runs along the pipe axis in meters from the insertion
end; ``theta`` is in degrees, 0 at the pipe top, increasing clockwise when
looking down the pipe from the insertion end. Branch holes are discs on
the unrolled cast-iron surface, i.e. in the plane ``(z_mm, R * theta_rad)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Union

import jsonschema
import numpy as np

from .errors import GeometryError, OverlapError, ParseError, RangeError

SCHEMA_VERSION = 1


def wrap_deg(angle):
    """Wrap angle(s) in degrees to (-180, 180]."""
    a = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    a = np.where(a == -180.0, 180.0, a)
    return float(a) if np.ndim(a) == 0 else a


@dataclass(frozen=True)
class LinerOpening:
    """Hole drilled through the liner during the second pass."""

    axial_pos: float
    angular_pos: float
    diameter: float


@dataclass(frozen=True)
class LinerSpec:
    inner_radius: float = 40.0
    thickness: float = 10.0
    conductivity_relative: float = 0.0
    openings: tuple[LinerOpening, ...] = ()


@dataclass(frozen=True)
class BranchConnection:
    """A lateral connection bored through the cast-iron wall.

    ``valve_depth`` is the radial distance from the bore wall to the valve
    face the profilometer sees through the hole. The valve bore has the
    hole's diameter and is shifted axially by ``valve_axis_offset``; where
    the laser misses the valve face, or when no fitting is mounted
    (``hardware_present`` false), nothing comes back.
    """

    axial_pos: float
    angular_pos: float
    hole_diameter: float = 20.0
    valve_axis_offset: float = 0.0
    valve_depth: float = 30.0
    hardware_present: bool = True

    @property
    def hole_radius(self) -> float:
        return self.hole_diameter / 2.0


@dataclass(frozen=True)
class Joint:
    axial_pos: float
    deflection_deg: float


@dataclass(frozen=True)
class HoleInterior:
    """Surface sample that falls inside an open branch hole.

    ``depth_to_valve`` is None when the laser gets no return.
    """

    depth_to_valve: float | None


SurfaceSample = Union[float, HoleInterior]


@dataclass(frozen=True)
class CoilFootprint:
    """Axis-aligned rectangle on the unrolled cast-iron surface."""

    z: float  # center, m
    theta: float  # center, deg
    axial: float  # extent, mm
    circumferential: float  # extent, mm


@dataclass(frozen=True)
class PipeScenario:
    length: float
    branches: tuple[BranchConnection, ...] = ()
    inner_radius_cast: float = 50.0
    liner: LinerSpec | None = None
    joints: tuple[Joint, ...] = ()
    seed: int = 0
    pipe_id: str = "pipe"

    @property
    def lined(self) -> bool:
        return self.liner is not None

    def bore_radius(self, lined: bool | None = None) -> float:
        if lined is None:
            lined = self.lined
        if lined:
            if self.liner is None:
                raise GeometryError("scenario has no liner")
            return self.liner.inner_radius
        return self.inner_radius_cast

    def with_liner(self, liner: LinerSpec | None = None) -> "PipeScenario":
        if liner is None:
            liner = LinerSpec(
                inner_radius=self.inner_radius_cast - 10.0, thickness=10.0
            )
        return _validated(replace(self, liner=liner))

    def with_branch(self, index: int, branch: BranchConnection) -> "PipeScenario":
        branches = list(self.branches)
        branches[index] = branch
        return _validated(replace(self, branches=tuple(branches)))


def _circ_distance_mm(radius: float, dtheta_deg):
    return radius * np.deg2rad(wrap_deg(dtheta_deg))


def _validated(sc: PipeScenario) -> PipeScenario:
    if not (0.0 < sc.length <= 200.0):
        raise GeometryError(f"pipe length {sc.length} m outside (0, 200]")
    if sc.inner_radius_cast <= 0:
        raise GeometryError("cast-iron radius must be positive")
    for b in sc.branches:
        if not 0.0 <= b.axial_pos <= sc.length:
            raise GeometryError(f"branch at {b.axial_pos} m lies outside the pipe")
        if b.hole_diameter <= 0 or b.valve_axis_offset < 0:
            raise GeometryError("branch hole diameter must be > 0 and offset >= 0")
        if not 0.0 <= b.angular_pos < 360.0:
            raise GeometryError("branch angle must be in [0, 360)")
    bs = sc.branches
    for i in range(len(bs)):
        for j in range(i + 1, len(bs)):
            dz = (bs[i].axial_pos - bs[j].axial_pos) * 1000.0
            ds = _circ_distance_mm(
                sc.inner_radius_cast, bs[i].angular_pos - bs[j].angular_pos
            )
            if math.hypot(dz, ds) < bs[i].hole_radius + bs[j].hole_radius:
                raise OverlapError(f"branches {i} and {j} overlap")
    if sc.liner is not None:
        ln = sc.liner
        if ln.inner_radius <= 0 or ln.thickness < 0:
            raise GeometryError("invalid liner dimensions")
        if ln.inner_radius >= sc.inner_radius_cast:
            raise GeometryError("liner inner radius must be below the cast-iron radius")
        if ln.inner_radius + ln.thickness > sc.inner_radius_cast + 1e-9:
            raise GeometryError("liner is thicker than the cast-iron bore")
    return sc


# ---------------------------------------------------------------------------
# scenario config


def _schema() -> dict:
    text = resources.files("pipebot").joinpath("schemas/scenario.schema.json").read_text()
    return json.loads(text)


@dataclass
class ScenarioConfig:
    """File-loadable description of a :class:`PipeScenario`.

    ``sensors`` and ``machining`` hold flat overrides of the defaults in
    :mod:`pipebot.mission` (keys of ``MissionConfig``).
    """

    length_m: float
    branches: list[dict] = field(default_factory=list)
    pipe_id: str = "pipe"
    inner_radius_cast_mm: float = 50.0
    liner: dict | None = None
    joints: list[dict] = field(default_factory=list)
    seed: int = 0
    sensors: dict = field(default_factory=dict)
    machining: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "pipe_id": self.pipe_id,
            "length_m": self.length_m,
            "inner_radius_cast_mm": self.inner_radius_cast_mm,
            "seed": self.seed,
            "liner": self.liner,
            "branches": [dict(b) for b in self.branches],
            "joints": [dict(j) for j in self.joints],
            "sensors": dict(self.sensors),
            "machining": dict(self.machining),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        validate_config_dict(data)
        return cls(
            length_m=float(data["length_m"]),
            branches=[dict(b) for b in data["branches"]],
            pipe_id=data.get("pipe_id", "pipe"),
            inner_radius_cast_mm=float(data.get("inner_radius_cast_mm", 50.0)),
            liner=dict(data["liner"]) if data.get("liner") else None,
            joints=[dict(j) for j in data.get("joints", [])],
            seed=int(data.get("seed", 0)),
            sensors=dict(data.get("sensors", {})),
            machining=dict(data.get("machining", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"scenario file is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.loads(Path(path).read_text())

    @classmethod
    def from_scenario(cls, sc: PipeScenario, sensors=None, machining=None) -> "ScenarioConfig":
        liner = None
        if sc.liner is not None:
            liner = {
                "inner_radius_mm": sc.liner.inner_radius,
                "thickness_mm": sc.liner.thickness,
                "conductivity_relative": sc.liner.conductivity_relative,
                "openings": [
                    {
                        "axial_pos_m": o.axial_pos,
                        "angular_pos_deg": o.angular_pos,
                        "diameter_mm": o.diameter,
                    }
                    for o in sc.liner.openings
                ],
            }
        return cls(
            length_m=sc.length,
            pipe_id=sc.pipe_id,
            inner_radius_cast_mm=sc.inner_radius_cast,
            liner=liner,
            seed=sc.seed,
            branches=[
                {
                    "axial_pos_m": b.axial_pos,
                    "angular_pos_deg": b.angular_pos,
                    "hole_diameter_mm": b.hole_diameter,
                    "valve_axis_offset_mm": b.valve_axis_offset,
                    "valve_depth_mm": b.valve_depth,
                    "hardware_present": b.hardware_present,
                }
                for b in sc.branches
            ],
            joints=[
                {"axial_pos_m": j.axial_pos, "deflection_deg": j.deflection_deg}
                for j in sc.joints
            ],
            sensors=dict(sensors or {}),
            machining=dict(machining or {}),
        )


def validate_config_dict(data: dict) -> None:
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        raise ParseError(f"scenario config invalid: {exc.message}") from exc


def build_scenario(config: ScenarioConfig) -> PipeScenario:
    validate_config_dict(config.to_dict())
    liner = None
    if config.liner is not None:
        ld = config.liner
        liner = LinerSpec(
            inner_radius=float(ld.get("inner_radius_mm", 40.0)),
            thickness=float(ld.get("thickness_mm", 10.0)),
            conductivity_relative=float(ld.get("conductivity_relative", 0.0)),
            openings=tuple(
                LinerOpening(o["axial_pos_m"], o["angular_pos_deg"], o["diameter_mm"])
                for o in ld.get("openings", [])
            ),
        )
    branches = tuple(
        BranchConnection(
            axial_pos=float(b["axial_pos_m"]),
            angular_pos=float(b["angular_pos_deg"]),
            hole_diameter=float(b.get("hole_diameter_mm", 20.0)),
            valve_axis_offset=float(b.get("valve_axis_offset_mm", 0.0)),
            valve_depth=float(b.get("valve_depth_mm", 30.0)),
            hardware_present=bool(b.get("hardware_present", True)),
        )
        for b in config.branches
    )
    joints = tuple(
        Joint(float(j["axial_pos_m"]), float(j["deflection_deg"])) for j in config.joints
    )
    return _validated(
        PipeScenario(
            length=float(config.length_m),
            branches=branches,
            inner_radius_cast=float(config.inner_radius_cast_mm),
            liner=liner,
            joints=joints,
            seed=int(config.seed),
            pipe_id=config.pipe_id,
        )
    )


# ---------------------------------------------------------------------------
# surface geometry


def surface_ranges(scenario: PipeScenario, z, theta, lined: bool | None = None):
    """Vectorised wall range (mm) seen from the pipe axis; NaN means no return.

    Inside an open hole the range is ``R + valve_depth`` on the valve face.
    """
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z, theta = np.broadcast_arrays(z, theta)
    if lined is None:
        lined = scenario.lined
    R = scenario.inner_radius_cast
    out = np.full(z.shape, R, dtype=float)
    for b in scenario.branches:
        dz = (z - b.axial_pos) * 1000.0
        ds = _circ_distance_mm(R, theta - b.angular_pos)
        inside = dz * dz + ds * ds < b.hole_radius**2
        if not inside.any():
            continue
        if b.hardware_present:
            dzv = dz - b.valve_axis_offset
            on_valve = dzv * dzv + ds * ds < b.hole_radius**2
            out[inside] = np.where(on_valve[inside], R + b.valve_depth, np.nan)
        else:
            out[inside] = np.nan
    if lined:
        if scenario.liner is None:
            raise GeometryError("scenario has no liner")
        Rl = scenario.liner.inner_radius
        open_mask = np.zeros(z.shape, dtype=bool)
        for o in scenario.liner.openings:
            dz = (z - o.axial_pos) * 1000.0
            ds = _circ_distance_mm(Rl, theta - o.angular_pos)
            open_mask |= dz * dz + ds * ds < (o.diameter / 2.0) ** 2
        out = np.where(open_mask, out, Rl)
    return out


def surface_radius_at(
    scenario: PipeScenario, z: float, theta: float, lined: bool | None = None
) -> SurfaceSample:
    if not 0.0 <= z <= scenario.length:
        raise RangeError(f"z = {z} m outside pipe [0, {scenario.length}]")
    r = float(surface_ranges(scenario, z, theta, lined))
    R = scenario.inner_radius_cast
    if math.isnan(r):
        return HoleInterior(None)
    if r > R:
        return HoleInterior(r - R)
    return r


# ---------------------------------------------------------------------------
# coil footprint / hole overlap


def _antideriv_half_chord(t, r):
    # integral of sqrt(r^2 - t^2) dt
    t = np.clip(t, -r, r)
    return 0.5 * (t * np.sqrt(np.maximum(r * r - t * t, 0.0)) + r * r * np.arcsin(t / r))


def _quadrant_area(x, y, r):
    """Area of the disc of radius r (centered at 0) inside {X <= x, Y <= y}."""
    X = np.clip(x, -r, r)
    a = np.sqrt(np.maximum(r * r - y * y, 0.0))
    Xa = np.clip(X, -a, a)
    g_full = _antideriv_half_chord(X, r) - _antideriv_half_chord(-r, r)
    g_inner = _antideriv_half_chord(Xa, r) - _antideriv_half_chord(-a, r)
    upper = 2.0 * g_full - g_inner + y * (Xa + a)
    lower = g_inner + y * (Xa + a)
    area = np.where(y >= 0.0, upper, lower)
    area = np.where(y >= r, 2.0 * g_full, area)
    area = np.where(y <= -r, 0.0, area)
    return area


def rect_disc_area(x1, x2, y1, y2, r):
    """Exact area of [x1, x2] x [y1, y2] intersected with the disc |p| < r."""
    return (
        _quadrant_area(x2, y2, r)
        - _quadrant_area(x1, y2, r)
        - _quadrant_area(x2, y1, r)
        + _quadrant_area(x1, y1, r)
    )


def hole_overlap_many(scenario: PipeScenario, z, theta, axial: float, circumferential: float):
    """Vectorised :func:`hole_overlap` over arrays of footprint centers."""
    R = scenario.inner_radius_cast
    period = 2.0 * math.pi * R
    if circumferential > period + 1e-9:
        raise GeometryError("footprint wider than the pipe circumference")
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z, theta = np.broadcast_arrays(z, theta)
    area = np.zeros(z.shape, dtype=float)
    hw, hh = axial / 2.0, circumferential / 2.0
    for b in scenario.branches:
        dz = (z - b.axial_pos) * 1000.0  # footprint center relative to hole
        ds = _circ_distance_mm(R, theta - b.angular_pos)
        for k in (-1, 0, 1):
            s = ds + k * period
            area += rect_disc_area(dz - hw, dz + hw, s - hh, s + hh, b.hole_radius)
    frac = area / (axial * circumferential)
    return np.clip(frac, 0.0, 1.0)


def hole_overlap(scenario: PipeScenario, footprint: CoilFootprint) -> float:
    """Area fraction of the footprint lying over branch holes (unrolled plane)."""
    return float(
        hole_overlap_many(
            scenario, footprint.z, footprint.theta, footprint.axial, footprint.circumferential
        )
    )
