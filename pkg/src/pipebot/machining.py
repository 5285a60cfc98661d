"""Boring/drilling toolpaths, their predicted durations and loads, and a machining simulator.

Toolpaths live in the delta frame (see :mod:`pipebot.motion`) with the
branch center on the z axis and the inner pipe surface at ``z = 0``.

Default feeds are calibration values, tuned once so that predicted
durations match field times for the cast-iron bore (20 -> 24.4 mm, about
30 min) and for the PE drilling sequence (plunge about 9 min, ream to 23 mm
about 4 min).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ForceLimitError,
    JamAbortError,
    KinematicError,
    SpindleLimitError,
    TorqueLimitError,
    UnreachableError,
)
from .motion import DeltaGeometry, delta_ik
from .world import BranchConnection, LinerOpening, LinerSpec, PipeScenario

MAX_RPM = 8000.0
MAX_TORQUE_NM = 0.5
MAX_SCREW_FORCE_N = 350.0
JAM_SAFE_RPM = 2800.0


@dataclass(frozen=True)
class MaterialParams:
    tool_diameter: float  # mm
    teeth: int
    spindle_rpm: float
    feed: float  # mm/s along the path
    radial_doc: float  # mm per pass
    helix_pitch: float  # mm descent per turn
    cut_depth: float  # mm, wall thickness plus breakthrough
    force_coeff: float  # N per (mm doc * mm/s feed), per screw
    specific_cutting_force: float  # N/mm^2
    plunge_feed: float = 0.02  # mm/s
    rapid_feed: float = 5.0  # mm/s
    approach: float = 2.0  # mm clearance above the surface


MATERIALS = {
    "cast_iron": MaterialParams(
        tool_diameter=12.0,
        teeth=4,
        spindle_rpm=2000.0,
        feed=10.0,
        radial_doc=0.1,
        helix_pitch=0.5,
        cut_depth=10.0,
        force_coeff=250.0,
        specific_cutting_force=1100.0,
    ),
    "hdpe": MaterialParams(
        tool_diameter=20.0,
        teeth=2,
        spindle_rpm=3000.0,
        feed=2.2,
        radial_doc=0.5,
        helix_pitch=0.5,
        cut_depth=11.0,
        force_coeff=100.0,
        specific_cutting_force=40.0,
        plunge_feed=0.02,
    ),
}


@dataclass(frozen=True)
class Cutter:
    diameter: float = 20.0
    teeth: int = 2


@dataclass(frozen=True)
class Segment:
    kind: str  # helix | line | dwell
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    feed: float = 0.0  # mm/s
    spindle_rpm: float = 0.0
    radial_doc: float = 0.0
    turns: float = 0.0  # helix only; center is the z axis
    dwell_s: float = 0.0
    plunge: bool = False
    force_per_screw: float = 0.0
    torque: float = 0.0

    @property
    def length(self) -> float:
        if self.kind == "dwell":
            return 0.0
        if self.kind == "helix":
            rho = math.hypot(self.start[0], self.start[1])
            dz = abs(self.end[2] - self.start[2])
            return math.hypot(2.0 * math.pi * rho * self.turns, dz)
        return math.dist(self.start, self.end)

    @property
    def duration(self) -> float:
        if self.kind == "dwell":
            return self.dwell_s
        return self.length / self.feed if self.length else 0.0

    def sample_points(self, per_turn: int = 24) -> np.ndarray:
        if self.kind != "helix":
            return np.array([self.start, self.end], dtype=float)
        n = max(2, int(math.ceil(self.turns * per_turn)) + 1)
        u = np.linspace(0.0, 1.0, n)
        rho = math.hypot(self.start[0], self.start[1])
        phi0 = math.atan2(self.start[1], self.start[0])
        phi = phi0 + 2.0 * math.pi * self.turns * u
        z = self.start[2] + (self.end[2] - self.start[2]) * u
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


@dataclass(frozen=True)
class Toolpath:
    segments: tuple[Segment, ...]
    material: str
    initial_diameter: float
    target_diameter: float
    tool_diameter: float

    @property
    def predicted_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def max_force_per_screw(self) -> float:
        return max((s.force_per_screw for s in self.segments), default=0.0)

    @property
    def max_torque(self) -> float:
        return max((s.torque for s in self.segments), default=0.0)

    @property
    def max_rpm(self) -> float:
        return max((s.spindle_rpm for s in self.segments), default=0.0)

    def points(self) -> np.ndarray:
        if not self.segments:
            return np.zeros((0, 3))
        return np.vstack([s.sample_points() for s in self.segments])


def _cut_loads(p: MaterialParams, doc: float, feed: float, rpm: float, tool_d: float, teeth: int):
    force = p.force_coeff * doc * feed
    fz = feed / (rpm / 60.0 * teeth)  # mm per tooth
    torque = p.specific_cutting_force * p.helix_pitch * fz * (tool_d / 2.0) / 1000.0
    return force, torque


def validate_toolpath(tp: Toolpath, geom: DeltaGeometry = DeltaGeometry()) -> None:
    if tp.max_rpm > MAX_RPM:
        raise SpindleLimitError(f"spindle {tp.max_rpm} rpm above {MAX_RPM}")
    if tp.max_torque > MAX_TORQUE_NM + 1e-12:
        raise TorqueLimitError(f"torque {tp.max_torque:.3f} Nm above {MAX_TORQUE_NM}")
    if tp.max_force_per_screw > MAX_SCREW_FORCE_N + 1e-9:
        raise ForceLimitError(f"{tp.max_force_per_screw:.1f} N per screw above {MAX_SCREW_FORCE_N}")
    for pt in tp.points():
        delta_ik(geom, pt)


def bore_pass_count(initial_d: float, target_d: float, doc: float) -> int:
    return int(math.ceil((target_d - initial_d) / 2.0 / doc - 1e-9))


def plan_bore(
    initial_d: float,
    target_d: float,
    material: str = "cast_iron",
    params: MaterialParams | None = None,
    geom: DeltaGeometry = DeltaGeometry(),
    tool_diameter: float | None = None,
) -> Toolpath:
    """Helical interpolation passes, each widening the hole by one radial depth of cut."""
    p = params or MATERIALS[material]
    tool_d = p.tool_diameter if tool_diameter is None else tool_diameter
    if target_d < initial_d:
        raise ValueError("target diameter below the initial diameter")
    if tool_d > initial_d:
        raise ValueError(f"tool Ø{tool_d} does not fit the Ø{initial_d} hole")
    segs: list[Segment] = []
    n = bore_pass_count(initial_d, target_d, p.radial_doc)
    z_top, z_bot = p.approach, -p.cut_depth
    turns = (z_top - z_bot) / p.helix_pitch
    force, torque = _cut_loads(p, p.radial_doc, p.feed, p.spindle_rpm, tool_d, p.teeth)
    here = (0.0, 0.0, z_top)
    for k in range(1, n + 1):
        d_k = min(initial_d + 2.0 * p.radial_doc * k, target_d)
        rho = (d_k - tool_d) / 2.0
        doc = (d_k - max(initial_d, d_k - 2.0 * p.radial_doc)) / 2.0
        top = (rho, 0.0, z_top)
        bot = (rho, 0.0, z_bot)
        common = dict(spindle_rpm=p.spindle_rpm, radial_doc=doc)
        segs.append(Segment("line", here, top, feed=p.rapid_feed, spindle_rpm=p.spindle_rpm))
        segs.append(
            Segment("helix", top, bot, feed=p.feed, turns=turns, force_per_screw=force * doc / p.radial_doc,
                    torque=torque, **common)
        )
        segs.append(
            Segment("helix", bot, bot, feed=p.feed, turns=1.0, force_per_screw=force * doc / p.radial_doc,
                    torque=torque, **common)
        )
        segs.append(Segment("line", bot, top, feed=p.rapid_feed, spindle_rpm=p.spindle_rpm))
        here = top
    tp = Toolpath(tuple(segs), material, initial_d, target_d, tool_d)
    try:
        validate_toolpath(tp, geom)
    except KinematicError as exc:
        if isinstance(exc, UnreachableError):
            raise
        raise UnreachableError(str(exc)) from exc
    return tp


def jam_risk(rpm: float) -> float:
    return float(min(1.0, max(0.0, (JAM_SAFE_RPM - rpm) / JAM_SAFE_RPM)))


def plan_pe_drill(
    hole_d_target: float,
    cutter: Cutter = Cutter(),
    rpm: float = 3000.0,
    params: MaterialParams | None = None,
    geom: DeltaGeometry = DeltaGeometry(),
) -> tuple[Toolpath, float]:
    """Plunge the cutter through the liner, then ream if a larger hole is wanted."""
    if rpm > MAX_RPM:
        raise SpindleLimitError(f"spindle {rpm} rpm above {MAX_RPM}")
    if rpm <= 0:
        raise ValueError("rpm must be positive")
    p = replace(params or MATERIALS["hdpe"], spindle_rpm=rpm)
    z_top, z_bot = p.approach, -p.cut_depth
    force, torque = _cut_loads(p, cutter.diameter / 2.0, p.plunge_feed, rpm, cutter.diameter, cutter.teeth)
    segs = [
        Segment("line", (0.0, 0.0, z_top), (0.0, 0.0, 0.0), feed=p.rapid_feed, spindle_rpm=rpm),
        Segment("line", (0.0, 0.0, 0.0), (0.0, 0.0, z_bot), feed=p.plunge_feed, spindle_rpm=rpm,
                radial_doc=cutter.diameter / 2.0, plunge=True, force_per_screw=force, torque=torque),
        Segment("dwell", (0.0, 0.0, z_bot), (0.0, 0.0, z_bot), spindle_rpm=rpm, dwell_s=2.0),
        Segment("line", (0.0, 0.0, z_bot), (0.0, 0.0, z_top), feed=p.rapid_feed, spindle_rpm=rpm),
    ]
    final = cutter.diameter
    if hole_d_target > cutter.diameter:
        ream = plan_bore(cutter.diameter, hole_d_target, "hdpe", p, geom, tool_diameter=cutter.diameter)
        segs.extend(ream.segments)
        final = hole_d_target
    tp = Toolpath(tuple(segs), "hdpe", 0.0, final, cutter.diameter)
    validate_toolpath(tp, geom)
    return tp, jam_risk(rpm)


@dataclass(frozen=True)
class MachiningOutcome:
    final_diameter: float
    duration: float
    max_radial_force_per_screw: float
    jam_occurred: bool
    retries_used: int = 0


def simulate_machining(
    scenario: PipeScenario,
    branch: BranchConnection | int,
    toolpath: Toolpath,
    seed=None,
    retries: int = 1,
    rpm_step: float = 300.0,
    feed_jitter: float = 0.02,
    site: tuple[float, float] | None = None,
    geom: DeltaGeometry = DeltaGeometry(),
) -> tuple[MachiningOutcome, PipeScenario]:
    """Execute a toolpath at a branch and return the outcome with the machined scenario.

    Cast iron: the branch hole takes the toolpath's final diameter. HDPE: an
    opening is cut in the liner at ``site`` (z m, theta deg), by default the
    branch position. Each plunge can jam with probability ``jam_risk(rpm)``;
    a jam is retried at ``rpm + rpm_step`` while retries remain.
    """
    idx = branch if isinstance(branch, int) else scenario.branches.index(branch)
    b = scenario.branches[idx]
    if not toolpath.segments:
        diameter = b.hole_diameter if toolpath.material == "cast_iron" else 0.0
        return MachiningOutcome(diameter, 0.0, 0.0, False), scenario
    validate_toolpath(toolpath, geom)
    rng = np.random.default_rng(seed)
    duration = 0.0
    jammed = False
    used = 0
    for seg in toolpath.segments:
        d = seg.duration
        if seg.plunge:
            rpm = seg.spindle_rpm
            while rng.random() < jam_risk(rpm):
                jammed = True
                if used >= retries:
                    raise JamAbortError(f"cutter jammed at {rpm:.0f} rpm, no retries left")
                used += 1
                rpm = min(rpm + rpm_step, MAX_RPM)
                duration += d * (1.0 + feed_jitter * rng.standard_normal())
        duration += d * (1.0 + feed_jitter * rng.standard_normal())
    final = toolpath.target_diameter
    if toolpath.material == "cast_iron":
        new = scenario.with_branch(idx, replace(b, hole_diameter=final))
    else:
        if scenario.liner is None:
            raise ValueError("PE machining needs a lined scenario")
        z, th = site if site is not None else (b.axial_pos, b.angular_pos)
        opening = LinerOpening(float(z), float(th % 360.0), final)
        liner = replace(scenario.liner, openings=scenario.liner.openings + (opening,))
        new = scenario.with_liner(liner)
    outcome = MachiningOutcome(final, max(duration, 0.0), toolpath.max_force_per_screw, jammed, used)
    return outcome, new
