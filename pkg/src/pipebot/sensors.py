"""Synthetic measurements: profilometer, front laser ring, odometry, eddy-current coils.

Every sampler takes an explicit ``seed`` (an int or a ``numpy.random.Generator``)
so that streams are reproducible and can be generated concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeometryError, RangeError, RotationRangeError, SamplingError
from .world import PipeScenario, hole_overlap_many, surface_ranges

ROLL_LIMIT_DEG = 400.0
DEFAULT_STEP_TIME_S = 1.667  # 10 min for 360 steps of 1 deg


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class RobotPose:
    z: float  # m
    roll: float = 0.0  # deg, operational module rotation
    tool_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.roll <= ROLL_LIMIT_DEG:
            raise RotationRangeError(f"roll {self.roll} outside [0, {ROLL_LIMIT_DEG}]")


# ---------------------------------------------------------------------------
# profilometry


@dataclass(frozen=True, eq=False)
class ProfileLine:
    """One laser stripe: ranges (mm, NaN = no return) along the pipe axis."""

    theta: float  # stripe angle, deg (may exceed 360 within the roll range)
    z_local: np.ndarray  # mm, relative to the pose datum
    ranges: np.ndarray
    noise_sigma: float = 0.0


@dataclass(frozen=True, eq=False)
class ProfileScan:
    lines: tuple[ProfileLine, ...]
    angular_step: float
    duration: float
    pose: RobotPose

    @property
    def thetas(self) -> np.ndarray:
        return np.array([ln.theta for ln in self.lines])

    def range_grid(self) -> np.ndarray:
        """(n_lines, n_samples) range matrix."""
        return np.vstack([ln.ranges for ln in self.lines])


def sample_profile_line(
    scenario: PipeScenario,
    pose: RobotPose,
    theta: float,
    window: float = 40.0,
    step: float = 0.2,
    noise_sigma: float = 0.0,
    seed=None,
) -> ProfileLine:
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(round(window / step)) + 1
    z_local = (np.arange(n) - (n - 1) / 2.0) * step
    z = pose.z + z_local / 1000.0
    if z[0] < 0.0 or z[-1] > scenario.length:
        raise RangeError("profile window extends past the pipe ends")
    truth = surface_ranges(scenario, z, theta)
    if noise_sigma > 0:
        truth = truth + _rng(seed).normal(0.0, noise_sigma, size=n)
    return ProfileLine(float(theta), z_local, truth, noise_sigma)


def run_profile_scan(
    scenario: PipeScenario,
    pose: RobotPose,
    angular_step: float = 1.0,
    per_step_time: float = DEFAULT_STEP_TIME_S,
    noise_sigma: float = 0.0,
    seed=None,
    sweep: float = 360.0,
    window: float = 40.0,
    step: float = 0.2,
) -> ProfileScan:
    """Rotate the operational module from ``pose.roll`` through ``sweep`` degrees."""
    if angular_step <= 0:
        raise ValueError("angular_step must be positive")
    if sweep > ROLL_LIMIT_DEG or pose.roll + sweep > ROLL_LIMIT_DEG + 1e-9:
        raise RotationRangeError(
            f"sweep of {sweep} deg from roll {pose.roll} exceeds the {ROLL_LIMIT_DEG} deg range"
        )
    n = int(round(sweep / angular_step))
    rng = _rng(seed)
    lines = []
    for k in range(n):
        # stripe angle kept as the (unwrapped) roll so lines stay ordered
        roll = pose.roll + k * angular_step
        lines.append(sample_profile_line(scenario, pose, roll, window, step, noise_sigma, rng))
    return ProfileScan(tuple(lines), angular_step, n * per_step_time, pose)


# ---------------------------------------------------------------------------
# front laser ring


@dataclass(frozen=True, eq=False)
class LaserReading:
    """Ring of radial ranges projected ``lookahead`` mm ahead of the robot."""

    thetas: np.ndarray
    ranges: np.ndarray
    lookahead: float

    @cached_property
    def discontinuity(self) -> np.ndarray:
        """Rays whose range departs from the ring's wall level by more than 5 mm."""
        return discontinuity_mask(self.ranges)


def discontinuity_mask(ranges: np.ndarray, jump: float = 5.0) -> np.ndarray:
    finite = ranges[np.isfinite(ranges)]
    if finite.size == 0:
        return np.ones(ranges.shape, dtype=bool)
    wall = np.median(finite)
    with np.errstate(invalid="ignore"):
        return ~(np.abs(ranges - wall) <= jump)


def sample_front_laser(
    scenario: PipeScenario,
    z: float,
    lookahead: float = 100.0,
    noise_sigma: float = 0.0,
    seed=None,
    n_rays: int = 360,
) -> LaserReading:
    zr = z + lookahead / 1000.0
    if not 0.0 <= zr <= scenario.length:
        raise RangeError(f"laser ring at {zr} m lies outside the pipe")
    thetas = np.arange(n_rays) * (360.0 / n_rays)
    ranges = surface_ranges(scenario, zr, thetas)
    if noise_sigma > 0:
        ranges = ranges + _rng(seed).normal(0.0, noise_sigma, size=n_rays)
    return LaserReading(thetas, ranges, lookahead)


# ---------------------------------------------------------------------------
# odometry


@dataclass(frozen=True)
class OdometryModel:
    """Position-estimate noise: a multiplicative scale error plus additive jitter (mm)."""

    scale_error_sigma: float = 0.008
    jitter_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.scale_error_sigma < 0 or self.jitter_sigma < 0:
            raise ValueError("odometry sigmas must be >= 0")


def sample_odometry(model: OdometryModel, true_delta_z: float, seed=None) -> float:
    rng = _rng(model.seed if seed is None else seed)
    scale = rng.normal(0.0, model.scale_error_sigma) if model.scale_error_sigma else 0.0
    jitter = rng.normal(0.0, model.jitter_sigma) if model.jitter_sigma else 0.0
    return true_delta_z * (1.0 + scale) + jitter / 1000.0


class Odometer:
    """Odometry over one traversal: a single scale error, fresh jitter per reading."""

    def __init__(self, model: OdometryModel, seed=None, origin: float = 0.0):
        self.model = model
        self.origin = origin
        self._rng = _rng(model.seed if seed is None else seed)
        s = model.scale_error_sigma
        self.scale = 1.0 + (self._rng.normal(0.0, s) if s else 0.0)

    def measure(self, true_z):
        true_z = np.asarray(true_z, dtype=float)
        j = self.model.jitter_sigma
        jitter = self._rng.normal(0.0, j, size=true_z.shape) / 1000.0 if j else 0.0
        out = self.origin + (true_z - self.origin) * self.scale + jitter
        return float(out) if out.ndim == 0 else out

    def locate(self, believed_z: float) -> float:
        """True position reached when driving until the odometer reads ``believed_z``."""
        j = self.model.jitter_sigma
        jitter = self._rng.normal(0.0, j) / 1000.0 if j else 0.0
        return self.origin + (believed_z - jitter - self.origin) / self.scale


# ---------------------------------------------------------------------------
# eddy current


@dataclass(frozen=True)
class CoilParams:
    """Coil model; footprint extents in mm on the unrolled cast-iron surface.

    ``axial_offset`` places the coil relative to the pose datum (mm) and
    ``theta_offset`` relative to the module roll (deg).
    """

    axial: float = 20.0
    circumferential: float = 20.0
    excitation_freq: float = 1000.0
    excitation_amplitude: float = 1.0
    base_impedance: complex = complex(20.0, 60.0)
    sensitivity: complex = complex(-2.0, 5.0)
    liftoff_decay: float = 0.05
    axial_offset: float = 0.0
    theta_offset: float = 0.0

    def __post_init__(self):
        if self.excitation_freq <= 0:
            raise ValueError("excitation frequency must be positive")


def encircling_coil(radius_mm: float = 50.0, **kw) -> CoilParams:
    """Axial-probe coil: covers the whole circumference."""
    return CoilParams(circumferential=2.0 * math.pi * radius_mm, **kw)


def _liftoff_gain(scenario: PipeScenario, coil: CoilParams, lined: bool) -> float:
    if not lined:
        return 1.0
    if scenario.liner is None:
        raise GeometryError("scenario has no liner")
    return math.exp(-scenario.liner.thickness * coil.liftoff_decay)


def coil_impedance_many(scenario, z, roll, coil: CoilParams, lined: bool | None = None):
    if lined is None:
        lined = scenario.lined
    zc = np.asarray(z, dtype=float) + coil.axial_offset / 1000.0
    th = np.asarray(roll, dtype=float) + coil.theta_offset
    ov = hole_overlap_many(scenario, zc, th, coil.axial, coil.circumferential)
    return coil.base_impedance + coil.sensitivity * ov * _liftoff_gain(scenario, coil, lined)


def coil_impedance(scenario, pose: RobotPose, coil: CoilParams, lined: bool | None = None) -> complex:
    return complex(coil_impedance_many(scenario, pose.z, pose.roll, coil, lined))


@dataclass(frozen=True, eq=False)
class PoseTrack:
    t_us: np.ndarray  # int64, strictly increasing
    z: np.ndarray
    roll: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.t_us) <= 0):
            raise ValueError("pose track timestamps must be strictly increasing")

    @classmethod
    def from_poses(cls, items) -> "PoseTrack":
        items = list(items)
        return cls(
            np.array([t for t, _ in items], dtype=np.int64),
            np.array([p.z for _, p in items], dtype=float),
            np.array([p.roll for _, p in items], dtype=float),
        )

    @classmethod
    def constant_speed(cls, z0: float, z1: float, speed: float, roll: float = 0.0, t0_us: int = 0):
        dur_us = int(round(abs(z1 - z0) / speed * 1e6))
        return cls(
            np.array([t0_us, t0_us + dur_us], dtype=np.int64),
            np.array([z0, z1], dtype=float),
            np.array([roll, roll], dtype=float),
        )

    def z_at(self, t_us):
        return np.interp(np.asarray(t_us, dtype=float), self.t_us.astype(float), self.z)

    def roll_at(self, t_us):
        return np.interp(np.asarray(t_us, dtype=float), self.t_us.astype(float), self.roll)


@dataclass(frozen=True, eq=False)
class RawECSignal:
    sample_rate: float
    t0: int  # us
    samples: np.ndarray
    pose_track: PoseTrack
    excitation_freq: float

    @property
    def t_seconds(self) -> np.ndarray:
        return self.t0 * 1e-6 + np.arange(self.samples.size) / self.sample_rate

    @property
    def t_us(self) -> np.ndarray:
        return self.t0 + np.rint(np.arange(self.samples.size) * 1e6 / self.sample_rate).astype(
            np.int64
        )


def synthesize_ec_raw(
    scenario: PipeScenario,
    trajectory: PoseTrack,
    coil: CoilParams,
    sample_rate: float = 8000.0,
    seed=None,
    noise_sigma: float = 0.0,
    lined: bool | None = None,
) -> RawECSignal:
    """Digitised coil voltage ``|Z| A sin(2 pi f t + arg Z)`` along a pose track."""
    if sample_rate <= 2.0 * coil.excitation_freq:
        raise SamplingError(
            f"sample rate {sample_rate} Hz must exceed twice the excitation frequency"
        )
    t0 = int(trajectory.t_us[0])
    n = int((trajectory.t_us[-1] - t0) * sample_rate // 1_000_000) + 1
    t_rel = np.arange(n) / sample_rate
    t_us = t0 + np.rint(t_rel * 1e6)
    z = trajectory.z_at(t_us)
    roll = trajectory.roll_at(t_us)
    Z = coil_impedance_many(scenario, z, roll, coil, lined)
    t_abs = t0 * 1e-6 + t_rel
    s = np.abs(Z) * coil.excitation_amplitude * np.sin(
        2.0 * np.pi * coil.excitation_freq * t_abs + np.angle(Z)
    )
    if noise_sigma > 0:
        s = s + _rng(seed).normal(0.0, noise_sigma, size=n)
    return RawECSignal(sample_rate, t0, s, trajectory, coil.excitation_freq)
