"""Two-pass mission: map and bore branches in bare cast iron, then relocate and drill through the liner."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from . import dsp
from .errors import (
    FormatError,
    JamAbortError,
    MissionAbort,
    NoDetectionError,
    NoHoleError,
    ParseError,
    PhaseError,
    PoorFitError,
    RelocationError,
    UsageError,
)
from .machining import Cutter, plan_bore, plan_pe_drill, simulate_machining
from .motion import pantograph_fits, roll_for_angle, rotate_plan, traction_check
from .perception import (
    BranchDetection,
    ComplianceLimits,
    ComplianceReport,
    assess_compliance,
    detect_branches_front,
    ec_axial_localize_all,
    ec_radial_center,
    ec_radial_scan,
    fit_hole,
    reconstruct_cloud,
)
from .sensors import (
    CoilParams,
    LaserReading,
    Odometer,
    OdometryModel,
    PoseTrack,
    RobotPose,
    encircling_coil,
    run_profile_scan,
    sample_front_laser,
    synthesize_ec_raw,
)
from .world import PipeScenario, wrap_deg

MAP_FORMAT = "pipebot-branchmap"
MAP_VERSION = 1

PASS1 = "pass1_cast_iron"
PASS2 = "pass2_lined"

REFERENCE_MINUTES = {"bore_cast_iron": 30.0, "drill_pe": 9.0, "ream_pe": 4.0}


@dataclass(frozen=True)
class MissionConfig:
    """Mission-wide defaults; any of them can be overridden per scenario or from the command line."""

    seed: int = 0
    speed: float = 0.10  # m/s
    base_drag: float = 200.0  # N, tether + umbilical at the entry pit
    drag_per_meter: float = 0.5  # N/m
    max_joint_deflection: float = 6.0  # deg
    rotation_speed: float = 30.0  # deg/s
    # front laser / odometry
    lookahead: float = 100.0  # mm
    reading_step: float = 1.0  # mm
    n_rays: int = 360
    laser_noise: float = 0.1  # mm
    odometry_scale_sigma: float = 0.008
    odometry_jitter: float = 0.5  # mm
    # profilometry
    angular_step: float = 1.0
    per_step_time: float = 1.667  # s
    scan_sweep: float = 40.0  # deg
    scan_window: float = 60.0  # mm
    scan_step: float = 0.2  # mm
    profile_noise: float = 0.3  # mm
    nominal_hole_diameter: float = 20.0  # mm, rear-wall bias correction
    max_fit_rms: float = 1.0
    max_offset: float = 5.0
    min_diameter: float = 15.0
    max_diameter: float = 30.0
    bore_target: float = 24.4  # mm
    # eddy current
    search_window: float = 0.2  # m
    sample_rate: float = 8000.0
    excitation_freq: float = 1000.0
    block: int = 40
    ma_window: int = 15
    ec_noise: float = 0.05
    coil_spacing: float = 30.0  # mm between the two axial coils
    axial_coil_length: float = 20.0  # mm
    axial_threshold: float = 0.03
    radial_coil: float = 20.0  # mm, square footprint
    radial_z_half: float = 12.0
    radial_theta_half: float = 20.0
    radial_z_step: float = 0.5
    radial_theta_step: float = 0.5
    relocation_tolerance: float = 2.0  # mm
    # PE machining
    drill_target: float = 23.0
    drill_rpm: float = 3000.0
    jam_retries: int = 1
    rpm_step: float = 300.0

    def with_overrides(self, overrides: dict[str, Any]) -> "MissionConfig":
        names = {f.name: f for f in dataclasses.fields(self)}
        kw = {}
        for key, value in overrides.items():
            if key not in names:
                raise UsageError(f"unknown config key {key!r}")
            current = getattr(self, key)
            try:
                kw[key] = type(current)(value) if not isinstance(current, bool) else _as_bool(value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {key}: {value!r}") from exc
        return dataclasses.replace(self, **kw)

    @property
    def odometry(self) -> OdometryModel:
        return OdometryModel(self.odometry_scale_sigma, self.odometry_jitter, self.seed)

    @property
    def limits(self) -> ComplianceLimits:
        return ComplianceLimits(self.max_offset, self.min_diameter, self.max_diameter)

    def axial_coils(self, pipe_radius: float) -> tuple[CoilParams, CoilParams]:
        kw = dict(axial=self.axial_coil_length, excitation_freq=self.excitation_freq)
        half = self.coil_spacing / 2.0
        return (
            encircling_coil(pipe_radius, axial_offset=half, **kw),
            encircling_coil(pipe_radius, axial_offset=-half, **kw),
        )

    def radial_coil_params(self) -> CoilParams:
        return CoilParams(
            axial=self.radial_coil, circumferential=self.radial_coil, excitation_freq=self.excitation_freq
        )


def _as_bool(v) -> bool:
    if isinstance(v, str):
        return v.lower() in {"1", "true", "yes", "on"}
    return bool(v)


# ---------------------------------------------------------------------------
# log and state machine


@dataclass(frozen=True)
class LogRecord:
    timestamp_us: int
    phase: str
    event: str
    payload: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"timestamp_us": self.timestamp_us, "phase": self.phase, "event": self.event,
             "payload": self.payload},
            sort_keys=True,
        )


@dataclass
class MissionLog:
    records: list[LogRecord] = field(default_factory=list)

    def add(self, t_us: int, phase: str, event: str, **payload) -> None:
        self.records.append(LogRecord(int(t_us), phase, event, _jsonable(payload)))

    def events(self, name: str) -> list[LogRecord]:
        return [r for r in self.records if r.event == name]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "MissionLog":
        log = cls()
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                log.records.append(LogRecord(d["timestamp_us"], d["phase"], d["event"], d["payload"]))
        return log

    def __add__(self, other: "MissionLog") -> "MissionLog":
        return MissionLog(self.records + other.records)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


_TRANSITIONS = {
    PASS1: {
        "traverse": {"characterize", "done"},
        "characterize": {"machine", "traverse"},
        "machine": {"traverse"},
        "done": set(),
    },
    PASS2: {
        "traverse": {"relocate", "done"},
        "relocate": {"machine", "traverse"},
        "machine": {"traverse"},
        "done": set(),
    },
}


class MissionStateMachine:
    """Phase bookkeeping for one pass; illegal transitions raise :class:`PhaseError`."""

    def __init__(self, pass_name: str, log: MissionLog | None = None):
        if pass_name not in _TRANSITIONS:
            raise ValueError(f"unknown pass {pass_name!r}")
        self.pass_name = pass_name
        self.phase = "traverse"
        self.log = log

    def to(self, phase: str, t_us: int = 0) -> None:
        if phase not in _TRANSITIONS[self.pass_name][self.phase]:
            raise PhaseError(f"{self.pass_name}: {self.phase} -> {phase} not allowed")
        if self.log is not None:
            self.log.add(t_us, phase, "phase", previous=self.phase)
        self.phase = phase


# ---------------------------------------------------------------------------
# branch map


@dataclass
class BranchEntry:
    id: str
    axial_pos_est: float
    angular_pos_est: float
    diameter_est: float
    compliance: ComplianceReport
    provenance: list[tuple[str, int]] = field(default_factory=list)
    valve_axis_offset_est: float = 0.0
    status: str = "mapped"
    relocated: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "axial_pos_est": self.axial_pos_est,
            "angular_pos_est": self.angular_pos_est,
            "diameter_est": self.diameter_est,
            "valve_axis_offset_est": self.valve_axis_offset_est,
            "compliance": {"compliant": self.compliance.compliant, "reason": self.compliance.reason},
            "provenance": [[m, t] for m, t in self.provenance],
            "status": self.status,
            "relocated": list(self.relocated) if self.relocated is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BranchEntry":
        return cls(
            id=d["id"],
            axial_pos_est=float(d["axial_pos_est"]),
            angular_pos_est=float(d["angular_pos_est"]),
            diameter_est=float(d["diameter_est"]),
            compliance=ComplianceReport(bool(d["compliance"]["compliant"]), d["compliance"]["reason"]),
            provenance=[(m, int(t)) for m, t in d["provenance"]],
            valve_axis_offset_est=float(d.get("valve_axis_offset_est", 0.0)),
            status=d.get("status", "mapped"),
            relocated=tuple(d["relocated"]) if d.get("relocated") is not None else None,
        )


@dataclass
class BranchMap:
    pipe_id: str
    entries: list[BranchEntry] = field(default_factory=list)
    pass_history: list[str] = field(default_factory=list)

    def sort(self) -> None:
        self.entries.sort(key=lambda e: e.axial_pos_est)

    def to_dict(self) -> dict:
        return {
            "format": MAP_FORMAT,
            "version": MAP_VERSION,
            "pipe_id": self.pipe_id,
            "pass_history": list(self.pass_history),
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BranchMap":
        if d.get("format") != MAP_FORMAT:
            raise FormatError("not a branch map document")
        if d.get("version") != MAP_VERSION:
            raise FormatError(f"unsupported branch map version {d.get('version')!r}")
        try:
            m = cls(d["pipe_id"], [BranchEntry.from_dict(e) for e in d["entries"]], list(d["pass_history"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed branch map: {exc}") from exc
        ids = [e.id for e in m.entries]
        if len(set(ids)) != len(ids):
            raise ParseError("duplicate branch ids")
        return m

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def save_map(branch_map: BranchMap, path) -> None:
    Path(path).write_text(branch_map.dumps())


def load_map(path) -> BranchMap:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"cannot parse branch map: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("branch map must be a JSON object")
    return BranchMap.from_dict(data)


# ---------------------------------------------------------------------------
# passes


class PassResult(NamedTuple):
    branch_map: BranchMap
    log: MissionLog
    scenario: PipeScenario
    artifacts: dict


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _us(seconds: float) -> int:
    return int(round(seconds * 1e6))


def _check_feasibility(scenario: PipeScenario, cfg: MissionConfig, bore_mm: float) -> dict:
    required = cfg.base_drag + cfg.drag_per_meter * scenario.length
    if not pantograph_fits(bore_mm):
        raise MissionAbort(f"pantograph cannot clamp in a Ø{bore_mm} mm bore")
    if not traction_check(cfg.speed, required):
        raise MissionAbort(f"traction insufficient: {required:.0f} N needed at {cfg.speed} m/s")
    for j in scenario.joints:
        if abs(j.deflection_deg) > cfg.max_joint_deflection:
            raise MissionAbort(f"joint at {j.axial_pos} m deflects {j.deflection_deg} deg")
    return {"required_force": required, "bore_mm": bore_mm, "speed": cfg.speed}


def front_traverse(scenario: PipeScenario, cfg: MissionConfig, rng) -> tuple[np.ndarray, list[LaserReading]]:
    """Laser rings along the whole pipe; returns true reading positions and readings."""
    z_max = scenario.length - cfg.lookahead / 1000.0
    n = int(math.floor(z_max * 1000.0 / cfg.reading_step + 1e-9)) + 1
    z = np.arange(n) * cfg.reading_step / 1000.0
    readings = [
        sample_front_laser(scenario, float(zk), cfg.lookahead, cfg.laser_noise, rng, cfg.n_rays)
        for zk in z
    ]
    return z, readings


def _nearest_branch(scenario: PipeScenario, z: float, theta: float, max_mm: float = 30.0):
    best, best_d = None, max_mm
    R = scenario.inner_radius_cast
    for k, b in enumerate(scenario.branches):
        d = math.hypot((z - b.axial_pos) * 1000.0, R * math.radians(wrap_deg(theta - b.angular_pos)))
        if d < best_d:
            best, best_d = k, d
    return best


def _scan_start_roll(current: float, center_angle: float, sweep: float) -> float:
    a = (center_angle - sweep / 2.0) % 360.0
    options = [r for r in (a, a + 360.0) if r + sweep <= 400.0]
    if not options:
        raise MissionAbort(f"a {sweep} deg sweep cannot be centered on {center_angle:.1f} deg")
    return min(options, key=lambda r: abs(r - current))


def run_pass1(scenario: PipeScenario, config: MissionConfig | None = None) -> PassResult:
    cfg = config or MissionConfig(seed=scenario.seed)
    if scenario.liner is not None:
        raise MissionAbort("pass 1 runs in the bare cast-iron pipe")
    log = MissionLog()
    sm = MissionStateMachine(PASS1, log)
    rng_laser, rng_odo, rng_scan, rng_mach, rng_loc = _streams(cfg.seed, 5)
    feas = _check_feasibility(scenario, cfg, 2.0 * scenario.inner_radius_cast)
    t = 0
    log.add(t, "traverse", "start", pass_name=PASS1, pipe_id=scenario.pipe_id, **feas)

    odo = Odometer(cfg.odometry, seed=rng_odo)
    z_true, readings = front_traverse(scenario, cfg, rng_laser)
    z_odo = odo.measure(z_true)
    detections = detect_branches_front(list(zip(readings, z_odo)))
    for d in detections:
        # ring position at the rear-wall reading, for the ground-truth table
        k = int(np.argmin(np.abs(z_odo + cfg.lookahead / 1000.0 - d.axial_pos_est)))
        true_rear = float(z_true[k] + cfg.lookahead / 1000.0)
        tb = _nearest_branch(scenario, true_rear - cfg.nominal_hole_diameter / 2000.0, d.angular_pos_est, 40.0)
        log.add(
            t + _us(z_true[k] / cfg.speed), "traverse", "front_detection",
            z_est=d.axial_pos_est, theta_est=d.angular_pos_est, confidence=d.confidence,
            truth_z=scenario.branches[tb].axial_pos if tb is not None else None,
            truth_theta=scenario.branches[tb].angular_pos if tb is not None else None,
        )
    t += _us(z_true[-1] / cfg.speed)
    here = float(z_true[-1])
    roll = 0.0

    bmap = BranchMap(scenario.pipe_id, pass_history=[PASS1])
    current = scenario
    artifacts: dict = {"scans": {}}
    for n, det in enumerate(detections, start=1):
        bid = f"B{n:02d}"
        t_detect = next(r.timestamp_us for r in log.events("front_detection") if r.payload["z_est"] == det.axial_pos_est)
        believed = det.axial_pos_est - cfg.nominal_hole_diameter / 2000.0
        z_phys = odo.locate(believed)
        t += _us(abs(here - z_phys) / cfg.speed)
        here = z_phys
        sm.to("characterize", t)
        start = _scan_start_roll(roll, det.angular_pos_est, cfg.scan_sweep)
        plan = rotate_plan(roll, start)
        t += _us(abs(plan.travel) / cfg.rotation_speed)
        roll = start
        pose = RobotPose(z_phys, roll)
        scan = run_profile_scan(
            current, pose, cfg.angular_step, cfg.per_step_time, cfg.profile_noise, rng_scan,
            cfg.scan_sweep, cfg.scan_window, cfg.scan_step,
        )
        roll = start + cfg.angular_step * (len(scan.lines) - 1)
        t += _us(scan.duration)
        artifacts["scans"][bid] = scan
        cloud = reconstruct_cloud(scan, pose)
        try:
            h = fit_hole(cloud, current.inner_radius_cast, max_rms=cfg.max_fit_rms)
        except (NoHoleError, PoorFitError) as exc:
            log.add(t, "characterize", "characterization_failed", id=bid, reason=str(exc))
            bmap.entries.append(
                BranchEntry(bid, det.axial_pos_est, det.angular_pos_est, 0.0,
                            ComplianceReport(False, "diameter_out_of_range"),
                            [("front_laser", t_detect)], status="characterization_failed")
            )
            sm.to("traverse", t)
            continue
        est_z = believed + (h.center_z - z_phys)
        report = assess_compliance(h, cfg.limits)
        tb = _nearest_branch(current, h.center_z, h.center_theta)
        truth = current.branches[tb] if tb is not None else None
        log.add(
            t, "characterize", "characterized", id=bid, z_est=est_z, theta_est=h.center_theta,
            diameter_est=h.diameter_est, offset_est=h.valve_axis_offset_est, rms=h.rms_residual,
            compliant=report.compliant, reason=report.reason, scan_duration_s=scan.duration,
            truth_z=truth.axial_pos if truth else None, truth_theta=truth.angular_pos if truth else None,
            truth_diameter=truth.hole_diameter if truth else None,
        )
        entry = BranchEntry(
            bid, est_z, h.center_theta, h.diameter_est, report,
            [("front_laser", t_detect), ("profilometry", t)], h.valve_axis_offset_est,
            status="characterized" if report.compliant else "non_compliant",
        )
        bmap.entries.append(entry)
        if not report.compliant:
            sm.to("traverse", t)
            continue

        sm.to("machine", t)
        tp = plan_bore(min(h.diameter_est, cfg.bore_target), cfg.bore_target, "cast_iron")
        try:
            if tb is None:
                raise JamAbortError("no branch under the tool")
            outcome, current = simulate_machining(
                current, tb, tp, seed=rng_mach, retries=cfg.jam_retries, rpm_step=cfg.rpm_step
            )
        except JamAbortError as exc:
            entry.status = "failed"
            log.add(t, "machine", "machining_aborted", id=bid, reason=str(exc))
        else:
            t += _us(outcome.duration)
            entry.status = "bored"
            entry.diameter_est = outcome.final_diameter
            entry.provenance.append(("bore", t))
            log.add(
                t, "machine", "bored", id=bid, operation="bore_cast_iron",
                final_diameter=outcome.final_diameter, duration_s=outcome.duration,
                planned_s=tp.predicted_duration, max_force_per_screw=outcome.max_radial_force_per_screw,
                jam=outcome.jam_occurred,
            )
        sm.to("traverse", t)
    sm.to("done", t)
    log.add(t, "done", "end", pass_name=PASS1, branches=len(bmap.entries))
    bmap.sort()
    return PassResult(bmap, log, current, artifacts)


def run_pass2(scenario: PipeScenario, branch_map: BranchMap, config: MissionConfig | None = None) -> PassResult:
    cfg = config or MissionConfig(seed=scenario.seed)
    if scenario.liner is None:
        raise MissionAbort("pass 2 needs a relined pipe")
    if branch_map.pipe_id != scenario.pipe_id:
        raise MissionAbort(f"map is for pipe {branch_map.pipe_id!r}, not {scenario.pipe_id!r}")
    log = MissionLog()
    sm = MissionStateMachine(PASS2, log)
    rng_odo, rng_ec, rng_grid, rng_mach = _streams(cfg.seed + 1, 4)
    feas = _check_feasibility(scenario, cfg, 2.0 * scenario.liner.inner_radius)
    t = 0
    log.add(t, "traverse", "start", pass_name=PASS2, pipe_id=scenario.pipe_id, **feas)
    odo = Odometer(cfg.odometry, seed=rng_odo)
    coil_a, coil_b = cfg.axial_coils(scenario.inner_radius_cast)
    radial = cfg.radial_coil_params()
    R = scenario.inner_radius_cast

    bmap = BranchMap(branch_map.pipe_id, [dataclasses.replace(e, provenance=list(e.provenance)) for e in branch_map.entries],
                     branch_map.pass_history + [PASS2])
    current = scenario
    here = 0.0
    artifacts: dict = {"ec_traces": {}, "grids": {}}
    for entry in bmap.entries:
        if not entry.compliance.compliant or entry.status in {"failed", "characterization_failed"}:
            log.add(t, "traverse", "skipped", id=entry.id, reason=entry.compliance.reason if not entry.compliance.compliant else entry.status)
            continue
        lo = max(entry.axial_pos_est - cfg.search_window, cfg.coil_spacing / 2000.0 + 0.02)
        hi = min(entry.axial_pos_est + cfg.search_window, scenario.length - cfg.coil_spacing / 2000.0 - 0.02)
        z0, z1 = odo.locate(lo), odo.locate(hi)
        expected = odo.locate(entry.axial_pos_est)
        t += _us(abs(z0 - here) / cfg.speed)
        track = PoseTrack.constant_speed(z0, z1, cfg.speed, roll=0.0, t0_us=t)
        raw_a = synthesize_ec_raw(current, track, coil_a, cfg.sample_rate, rng_ec, cfg.ec_noise)
        raw_b = synthesize_ec_raw(current, track, coil_b, cfg.sample_rate, rng_ec, cfg.ec_noise)
        iq_a = dsp.lock_in_demodulate(raw_a, cfg.excitation_freq, cfg.block)
        iq_b = dsp.lock_in_demodulate(raw_b, cfg.excitation_freq, cfg.block)
        diff = dsp.differential(iq_a, iq_b)
        found = ec_axial_localize_all(diff, track, threshold=cfg.axial_threshold, window=cfg.ma_window)
        z_blocks = track.z_at(diff.t_us)
        artifacts["ec_traces"][entry.id] = {
            "t_us": diff.t_us, "raw": raw_a.samples[:: cfg.block][: len(diff)],
            "i": diff.i, "q": diff.q, "z_m": z_blocks, "roll_deg": track.roll_at(diff.t_us),
        }
        try:
            if not found:
                raise RelocationError(f"no eddy-current response near {entry.axial_pos_est:.3f} m")
            det = min(found, key=lambda d: abs(d.axial_pos_est - expected))
        except RelocationError as exc:
            t = int(track.t_us[-1])
            here = z1
            entry.status = "relocation_failed"
            log.add(t, "traverse", "relocation_failed", id=entry.id, reason=str(exc))
            continue
        # the stop is triggered at the crossing; the robot halts there
        t = int(det.t_us) + _us(0.5)
        here = det.axial_pos_est
        sm.to("relocate", t)
        tb = _nearest_branch(current, det.axial_pos_est, entry.angular_pos_est, 40.0)
        truth = current.branches[tb] if tb is not None else None
        log.add(
            t, "relocate", "axial_detection", id=entry.id, z=det.axial_pos_est, amplitude=det.amplitude,
            truth_z=truth.axial_pos if truth else None,
            error_mm=(det.axial_pos_est - truth.axial_pos) * 1000.0 if truth else None,
        )
        start = roll_for_angle(0.0, entry.angular_pos_est)
        t += _us(abs(start) / cfg.rotation_speed)
        grid = ec_radial_scan(
            current, det.axial_pos_est, entry.angular_pos_est, radial,
            z_half=cfg.radial_z_half, theta_half=cfg.radial_theta_half,
            z_step=cfg.radial_z_step, theta_step=cfg.radial_theta_step,
            sample_rate=cfg.sample_rate, block=cfg.block, dwell_blocks=cfg.ma_window,
            noise_sigma=cfg.ec_noise, seed=rng_grid,
        )
        artifacts["grids"][entry.id] = grid
        t += _us(grid.values.size * cfg.ma_window * cfg.block / cfg.sample_rate)
        try:
            zc, thc = ec_radial_center(grid)
        except NoDetectionError as exc:
            entry.status = "relocation_failed"
            log.add(t, "relocate", "relocation_failed", id=entry.id, reason=str(exc))
            sm.to("traverse", t)
            continue
        ax_err = (zc - truth.axial_pos) * 1000.0 if truth else None
        circ_err = R * math.radians(wrap_deg(thc - truth.angular_pos)) if truth else None
        log.add(
            t, "relocate", "relocated", id=entry.id, z=zc, theta=thc,
            truth_z=truth.axial_pos if truth else None, truth_theta=truth.angular_pos if truth else None,
            axial_error_mm=ax_err, circumferential_error_mm=circ_err,
            within_tolerance=(abs(ax_err) <= cfg.relocation_tolerance) if truth else None,
        )
        entry.relocated = (zc, thc)
        entry.provenance += [("ec_axial", int(det.t_us)), ("ec_radial", t)]

        sm.to("machine", t)
        tp, risk = plan_pe_drill(cfg.drill_target, Cutter(), cfg.drill_rpm)
        plunge_s = sum(s.duration for s in tp.segments[:4])
        ream_s = tp.predicted_duration - plunge_s
        try:
            outcome, current = simulate_machining(
                current, tb if tb is not None else 0, tp, seed=rng_mach, retries=cfg.jam_retries,
                rpm_step=cfg.rpm_step, site=(zc, thc),
            )
        except JamAbortError as exc:
            entry.status = "drill_failed"
            log.add(t, "machine", "machining_aborted", id=entry.id, reason=str(exc), jam_risk=risk)
        else:
            t += _us(outcome.duration)
            entry.status = "drilled"
            entry.provenance.append(("drill", t))
            log.add(
                t, "machine", "drilled", id=entry.id, operation="drill_pe",
                final_diameter=outcome.final_diameter, duration_s=outcome.duration,
                planned_drill_s=plunge_s, planned_ream_s=ream_s, jam_risk=risk, jam=outcome.jam_occurred,
            )
        sm.to("traverse", t)
    sm.to("done", t)
    log.add(t, "done", "end", pass_name=PASS2, branches=len(bmap.entries))
    bmap.sort()
    return PassResult(bmap, log, current, artifacts)


# ---------------------------------------------------------------------------
# reporting


def distance_error_rows(log: MissionLog) -> list[dict]:
    """Distance-error rows: consecutive front-laser detections vs ground truth."""
    det = [r.payload for r in log.events("front_detection") if r.payload.get("truth_z") is not None]
    det.sort(key=lambda p: p["z_est"])
    rows = []
    for a, b in zip(det, det[1:]):
        true_d = b["truth_z"] - a["truth_z"]
        est_d = b["z_est"] - a["z_est"]
        err = abs(est_d - true_d) * 1000.0
        rows.append(
            {"true_m": true_d, "est_m": est_d, "error_mm": err,
             "error_pct": 100.0 * err / (true_d * 1000.0) if true_d else float("nan")}
        )
    return rows


def _fmt(v, spec=".3f"):
    return "-" if v is None else format(v, spec)


def mission_report(log: MissionLog, branch_map: BranchMap | None = None) -> str:
    out = ["Mission report", "=============="]
    if branch_map is not None:
        out.append(f"pipe: {branch_map.pipe_id}   passes: {', '.join(branch_map.pass_history) or '-'}")
        out.append(f"branches: {len(branch_map.entries)}")
    else:
        out.append("branches: 0")
    truth = {r.payload["id"]: r.payload for r in log.events("characterized")}
    reloc = {r.payload["id"]: r.payload for r in log.events("relocated")}
    if branch_map is not None and branch_map.entries:
        out += ["", "Branches", "--------",
                f"{'id':<5}{'z_est[m]':>10}{'z_true[m]':>11}{'err[mm]':>9}{'th_est':>8}{'th_true':>8}"
                f"{'D[mm]':>8}  {'compliance':<22}{'status':<20}{'reloc_err[mm]':>13}"]
        for e in branch_map.entries:
            tr = truth.get(e.id, {})
            tz = tr.get("truth_z")
            err = (tr["z_est"] - tz) * 1000.0 if tz is not None and "z_est" in tr else None
            rl = reloc.get(e.id, {})
            out.append(
                f"{e.id:<5}{e.axial_pos_est:>10.4f}{_fmt(tz, '.4f'):>11}{_fmt(err, '.2f'):>9}"
                f"{e.angular_pos_est:>8.1f}{_fmt(tr.get('truth_theta'), '.1f'):>8}{e.diameter_est:>8.2f}  "
                f"{e.compliance.reason:<22}{e.status:<20}{_fmt(rl.get('axial_error_mm'), '.2f'):>13}"
            )
    rows = distance_error_rows(log)
    out += ["", "Inter-branch distance errors (front laser + odometry)", "-----------------------------------------------------"]
    if rows:
        out.append(f"{'pair':<6}{'true[m]':>9}{'est[m]':>9}{'err[mm]':>9}{'err[%]':>8}")
        for k, r in enumerate(rows, start=1):
            out.append(f"S{k:<5}{r['true_m']:>9.3f}{r['est_m']:>9.3f}{r['error_mm']:>9.1f}{r['error_pct']:>8.2f}")
    else:
        out.append("(fewer than two detections)")
    mach = [r.payload for r in log.records if r.event in {"bored", "drilled"}]
    out += ["", "Machining durations", "-------------------"]
    if mach:
        out.append(f"{'id':<5}{'operation':<16}{'minutes':>9}{'reference':>11}")
        for p in mach:
            if p["operation"] == "bore_cast_iron":
                out.append(f"{p['id']:<5}{'bore_cast_iron':<16}{p['duration_s'] / 60:>9.1f}{REFERENCE_MINUTES['bore_cast_iron']:>11.0f}")
            else:
                out.append(f"{p['id']:<5}{'drill_pe':<16}{p['planned_drill_s'] / 60:>9.1f}{REFERENCE_MINUTES['drill_pe']:>11.0f}")
                out.append(f"{p['id']:<5}{'ream_pe':<16}{p['planned_ream_s'] / 60:>9.1f}{REFERENCE_MINUTES['ream_pe']:>11.0f}")
    else:
        out.append("(no machining)")
    return "\n".join(out) + "\n"


def report_tables(log: MissionLog) -> dict[str, str]:
    """CSV companions of :func:`mission_report`."""
    rows = distance_error_rows(log)
    dist = "pair,true_m,est_m,error_mm,error_pct\n" + "".join(
        f"S{k},{r['true_m']!r},{r['est_m']!r},{r['error_mm']!r},{r['error_pct']!r}\n"
        for k, r in enumerate(rows, start=1)
    )
    mach = "id,operation,duration_s\n"
    for r in log.records:
        p = r.payload
        if r.event == "bored":
            mach += f"{p['id']},bore_cast_iron,{p['duration_s']!r}\n"
        elif r.event == "drilled":
            mach += f"{p['id']},drill_pe,{p['planned_drill_s']!r}\n{p['id']},ream_pe,{p['planned_ream_s']!r}\n"
    return {"distances.csv": dist, "machining.csv": mach}
