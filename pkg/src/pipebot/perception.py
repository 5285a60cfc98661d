"""Branch detection, profilometric characterization and eddy-current relocation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage, optimize
from scipy.spatial import cKDTree

from . import dsp
from .errors import InsufficientDataError, NoDetectionError, NoHoleError, PoorFitError
from .sensors import (
    CoilParams,
    LaserReading,
    PoseTrack,
    ProfileScan,
    RobotPose,
    coil_impedance_many,
)
from .world import PipeScenario, wrap_deg


@dataclass(frozen=True)
class BranchDetection:
    axial_pos_est: float  # m
    method: str  # front_laser | ec_axial | ec_radial | profilometry
    confidence: float = 1.0
    rear_wall_flag: bool = False
    angular_pos_est: float | None = None
    amplitude: float | None = None
    t_us: int | None = None


# ---------------------------------------------------------------------------
# front laser


def _circular_mean_deg(angles) -> float:
    a = np.deg2rad(np.asarray(angles, dtype=float))
    m = float(np.rad2deg(np.arctan2(np.sin(a).mean(), np.cos(a).mean())) % 360.0)
    return 0.0 if m >= 360.0 - 1e-9 else m


def _label_with_wrap(mask: np.ndarray, wrap_cols: bool) -> tuple[np.ndarray, int]:
    """4-connected labels; optionally joins the first and last columns."""
    labels, n = ndimage.label(mask)
    if wrap_cols and n > 1 and mask.shape[1] > 1:
        parent = list(range(n + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b in zip(labels[:, 0], labels[:, -1]):
            if a and b:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(k) for k in range(n + 1)])
        uniq, remap = np.unique(roots, return_inverse=True)
        labels = remap[labels]
        n = len(uniq) - 1
    return labels, n


@dataclass(frozen=True)
class FrontRegion:
    """A connected discontinuity region in the stacked laser rings."""

    last_row: int  # index of the last ring that sees the region
    n_rows: int
    angle: float  # deg


def front_regions(readings: Sequence[LaserReading]) -> list[FrontRegion]:
    """Connected discontinuity regions, independent of where the rings were taken."""
    if not readings:
        return []
    mask = np.stack([r.discontinuity for r in readings])
    thetas = readings[0].thetas
    hit_rows = np.flatnonzero(mask.any(axis=1))
    if hit_rows.size == 0:
        return []
    # label each run of consecutive hit rows separately
    breaks = np.flatnonzero(np.diff(hit_rows) > 1) + 1
    out = []
    for run in np.split(hit_rows, breaks):
        sub = mask[run[0] : run[-1] + 1]
        labels, n = _label_with_wrap(sub, wrap_cols=True)
        for lab in range(1, n + 1):
            rows, cols = np.nonzero(labels == lab)
            out.append(
                FrontRegion(int(run[0] + rows.max()), int(rows.max() - rows.min() + 1), _circular_mean_deg(thetas[cols]))
            )
    return out


def detect_branches_front(
    readings: Sequence[tuple[LaserReading, float]],
    regions: Sequence[FrontRegion] | None = None,
) -> list[BranchDetection]:
    """One detection per contiguous discontinuity region of the laser rings.

    The reported position is the odometry estimate of the ring when it last
    sees the region, i.e. where the laser meets the hole's rear wall.
    ``regions`` may be passed in when only the odometry differs between calls.
    """
    if not readings:
        return []
    if regions is None:
        regions = front_regions([r for r, _ in readings])
    detections = []
    for reg in regions:
        reading, z = readings[reg.last_row]
        detections.append(
            BranchDetection(
                axial_pos_est=float(z + reading.lookahead / 1000.0),
                method="front_laser",
                confidence=float(1.0 - math.exp(-reg.n_rows / 3.0)),
                rear_wall_flag=True,
                angular_pos_est=reg.angle,
            )
        )
    detections.sort(key=lambda d: d.axial_pos_est)
    return detections


def inter_branch_distances(detections: Sequence[BranchDetection]) -> list[float]:
    if len(detections) < 2:
        raise InsufficientDataError("need at least two detections")
    z = sorted(d.axial_pos_est for d in detections)
    return [b - a for a, b in zip(z, z[1:])]


# ---------------------------------------------------------------------------
# profilometry


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) mm, module frame
    source_scan: ProfileScan | None = None
    pose: RobotPose | None = None

    def __len__(self):
        return len(self.points)

    def world_points(self) -> np.ndarray:
        """Points in the pipe frame (x, y from the pipe axis, z in mm from the pipe start)."""
        roll = self.pose.roll if self.pose else 0.0
        z0 = self.pose.z * 1000.0 if self.pose else 0.0
        p = self.points
        r = np.hypot(p[:, 0], p[:, 1])
        th = np.arctan2(p[:, 1], p[:, 0]) + np.deg2rad(roll)
        return np.column_stack([r * np.cos(th), r * np.sin(th), p[:, 2] + z0])


def reconstruct_cloud(scan: ProfileScan, pose: RobotPose | None = None) -> PointCloud:
    if not scan.lines:
        raise InsufficientDataError("empty scan")
    pose = pose or scan.pose
    chunks = []
    for ln in scan.lines:
        ok = np.isfinite(ln.ranges)
        th = np.deg2rad(ln.theta - pose.roll)
        r = ln.ranges[ok]
        chunks.append(np.column_stack([r * np.cos(th), r * np.sin(th), ln.z_local[ok]]))
    return PointCloud(np.vstack(chunks), scan, pose)


def fit_circle(x, y) -> tuple[float, float, float, np.ndarray]:
    """Geometric least-squares circle; returns (xc, yc, radius, residuals)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise InsufficientDataError("circle fit needs at least 3 points")
    # algebraic (Kasa) start
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x * x + y * y
    (c0, c1, c2), *_ = np.linalg.lstsq(A, b, rcond=None)
    xc0, yc0 = c0 / 2.0, c1 / 2.0

    def resid(c):
        return np.hypot(x - c[0], y - c[1]) - np.hypot(x - c[0], y - c[1]).mean()

    sol = optimize.least_squares(resid, [xc0, yc0], method="lm", xtol=1e-14, ftol=1e-14)
    xc, yc = sol.x
    d = np.hypot(x - xc, y - yc)
    radius = d.mean()
    return float(xc), float(yc), float(radius), d - radius


def cylinder_residuals(cloud: PointCloud, pipe_radius: float | None = None, margin: float = 5.0):
    """Radial residuals of wall points to a best-fit circle about the scan axis."""
    p = cloud.points
    r = np.hypot(p[:, 0], p[:, 1])
    ref = np.median(r) if pipe_radius is None else pipe_radius
    wall = np.abs(r - ref) <= margin
    _, _, _, res = fit_circle(p[wall, 0], p[wall, 1])
    return res


@dataclass(frozen=True)
class HoleCharacterization:
    center_z: float  # m
    center_theta: float  # deg
    diameter_est: float  # mm
    valve_axis_offset_est: float  # mm
    rms_residual: float  # mm

    @property
    def center(self) -> tuple[float, float]:
        return (self.center_z, self.center_theta)


def _scan_wall_mask(scan: ProfileScan, pipe_radius: float, margin: float):
    grid = scan.range_grid()
    with np.errstate(invalid="ignore"):
        wall = np.abs(grid - pipe_radius) <= margin
    return grid, wall


def _is_full_turn(scan: ProfileScan) -> bool:
    return len(scan.lines) * scan.angular_step >= 360.0 - 1e-9


def fit_hole(
    cloud: PointCloud,
    pipe_radius: float = 50.0,
    margin: float = 5.0,
    max_rms: float = 1.0,
) -> HoleCharacterization:
    """Circle fit to the wall/hole transitions of a profilometry scan.

    Work happens on the unrolled surface ``(z_mm, R * theta)``. Boundary
    points are the midpoints between the last wall sample and the first
    hole sample along each stripe. The valve population is the set of
    returns deeper than the wall; it is the lens where the valve bore
    overlaps the hole, whose centroid sits halfway between the two axes.
    """
    scan = cloud.source_scan
    if scan is None or not scan.lines:
        raise InsufficientDataError("cloud has no source scan")
    pose = cloud.pose or scan.pose
    grid, wall = _scan_wall_mask(scan, pipe_radius, margin)
    hole = ~wall
    if not hole.any():
        raise NoHoleError("no hole region in scan")
    labels, n = _label_with_wrap(hole, wrap_cols=False)
    if _is_full_turn(scan):
        labels, n = _label_with_wrap(hole.T, wrap_cols=True)
        labels = labels.T
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    main = labels == (1 + int(np.argmax(sizes)))
    thetas = scan.thetas
    z_local = scan.lines[0].z_local
    theta_ref = _circular_mean_deg(thetas[np.nonzero(main)[0]])

    zb, thb = [], []
    for row in np.flatnonzero(main.any(axis=1)):
        m = main[row]
        w = wall[row]
        k = np.flatnonzero((m[:-1] & w[1:]) | (w[:-1] & m[1:]))
        zb.extend(0.5 * (z_local[k] + z_local[k + 1]))
        thb.extend([thetas[row]] * k.size)
    if len(zb) < 3:
        raise NoHoleError("hole boundary not resolved")
    zb = np.asarray(zb)
    sb = pipe_radius * np.deg2rad(wrap_deg(np.asarray(thb) - theta_ref))
    zc, sc, radius, res = fit_circle(zb, sb)
    rms = float(np.sqrt(np.mean(res**2)))
    if rms > max_rms:
        raise PoorFitError(f"hole boundary fit rms {rms:.3f} mm exceeds {max_rms} mm")

    # valve population from the cloud
    p = cloud.points
    r = np.hypot(p[:, 0], p[:, 1])
    th = np.rad2deg(np.arctan2(p[:, 1], p[:, 0])) + pose.roll
    s = pipe_radius * np.deg2rad(wrap_deg(th - theta_ref))
    deep = (r > pipe_radius + margin) & (np.hypot(p[:, 2] - zc, s - sc) < radius + margin)
    if deep.any():
        offset = 2.0 * float(np.hypot(p[deep, 2].mean() - zc, s[deep].mean() - sc))
    else:
        offset = 0.0
    return HoleCharacterization(
        center_z=pose.z + zc / 1000.0,
        center_theta=float((theta_ref + np.rad2deg(sc / pipe_radius)) % 360.0),
        diameter_est=2.0 * radius,
        valve_axis_offset_est=offset,
        rms_residual=rms,
    )


def _boundary_points(cloud: PointCloud, pipe_radius: float | None, margin: float) -> np.ndarray:
    """World-frame points of samples that sit next to a wall/hole transition."""
    scan = cloud.source_scan
    if scan is None:
        return cloud.world_points()
    grid = scan.range_grid()
    if pipe_radius is None:
        pipe_radius = float(np.nanmedian(grid))
    with np.errstate(invalid="ignore"):
        cls = np.where(np.abs(grid - pipe_radius) <= margin, 0, np.where(np.isfinite(grid), 1, 2))
    edge = np.zeros(grid.shape, dtype=bool)
    edge[:, :-1] |= cls[:, :-1] != cls[:, 1:]
    edge[:, 1:] |= cls[:, :-1] != cls[:, 1:]
    edge[:-1, :] |= cls[:-1, :] != cls[1:, :]
    edge[1:, :] |= cls[:-1, :] != cls[1:, :]
    edge &= np.isfinite(grid)
    if not edge.any():
        return cloud.world_points()
    rows, cols = np.nonzero(edge)
    pose = cloud.pose or scan.pose
    th = np.deg2rad(scan.thetas[rows])
    r = grid[rows, cols]
    z = scan.lines[0].z_local[cols] + pose.z * 1000.0
    return np.column_stack([r * np.cos(th), r * np.sin(th), z])


@dataclass(frozen=True)
class DeviationStats:
    mean: float
    max: float
    n: int


def compare_reconstructions(
    cloud_a: PointCloud, cloud_b: PointCloud, pipe_radius: float | None = None, margin: float = 5.0
) -> DeviationStats:
    """Symmetric nearest-neighbour deviation between the hole-boundary regions of two scans."""
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise InsufficientDataError("empty cloud")
    pa = _boundary_points(cloud_a, pipe_radius, margin)
    pb = _boundary_points(cloud_b, pipe_radius, margin)
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    d = np.concatenate([da, db])
    return DeviationStats(float(d.mean()), float(d.max()), int(d.size))


# ---------------------------------------------------------------------------
# compliance


@dataclass(frozen=True)
class ComplianceLimits:
    max_offset: float = 5.0
    min_diameter: float = 15.0
    max_diameter: float = 30.0


@dataclass(frozen=True)
class ComplianceReport:
    compliant: bool
    reason: str  # ok | axis_offset_exceeds | diameter_out_of_range


def assess_compliance(h: HoleCharacterization, limits: ComplianceLimits = ComplianceLimits()) -> ComplianceReport:
    if not limits.min_diameter <= h.diameter_est <= limits.max_diameter:
        return ComplianceReport(False, "diameter_out_of_range")
    if h.valve_axis_offset_est > limits.max_offset:
        return ComplianceReport(False, "axis_offset_exceeds")
    return ComplianceReport(True, "ok")


# ---------------------------------------------------------------------------
# eddy current: axial differential probe


def _principal_projection(stream: dsp.IQStream) -> np.ndarray:
    iq = np.column_stack([stream.i, stream.q])
    _, vecs = np.linalg.eigh(iq.T @ iq)
    axis = vecs[:, -1]
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        axis = -axis
    return iq @ axis


@dataclass(frozen=True)
class _Lobe:
    sign: int
    start: int
    stop: int
    peak: int
    value: float


def _lobes(t, v, threshold, hysteresis) -> list[_Lobe]:
    lobes = []
    index = {int(tt): k for k, tt in enumerate(t)}
    for sign in (1, -1):
        ev = dsp.detect_events(dsp.Trace(t, sign * v), threshold, hysteresis)
        cur = {}
        for e in ev:
            k = index[e.t_us]
            if e.kind == "rising":
                cur = {"start": k}
            elif e.kind == "peak":
                cur["peak"] = k
                cur["value"] = e.value
                cur.setdefault("stop", len(t) - 1)
            else:
                cur["stop"] = k
                lobes.append(_Lobe(sign, cur["start"], k, cur["peak"], cur["value"]))
                cur = {}
        if "peak" in cur and "stop" in cur and cur["stop"] == len(t) - 1:
            lobes.append(_Lobe(sign, cur["start"], cur["stop"], cur["peak"], cur["value"]))
    lobes.sort(key=lambda lb: lb.peak)
    return lobes


def ec_axial_localize_all(
    diff: dsp.IQStream,
    pose_track: PoseTrack,
    threshold: float = 0.03,
    window: int = 15,
    hysteresis_frac: float = 0.2,
) -> list[BranchDetection]:
    """Every bipolar lobe pair in a differential trace, located at its zero crossing.

    The trace is projected on its principal I/Q axis so the differential
    response is signed, smoothed by the moving average, and the crossing
    time is corrected by the filter's group delay before being mapped to
    the robot's axial position through the pose track.
    """
    if len(diff) < 3:
        raise NoDetectionError("trace too short")
    proj = _principal_projection(diff)
    filt = dsp.moving_average(proj, window)
    dt = float(np.median(np.diff(diff.t_us)))
    t_eff = diff.t_us.astype(float) - 0.5 * (window - 1) * dt
    lobes = _lobes(diff.t_us, filt, threshold, hysteresis_frac * threshold)
    out = []
    used = set()
    for a, b in zip(lobes, lobes[1:]):
        if a.sign == b.sign or id(a) in used:
            continue
        if b.start - a.stop > 2 * window + 2:
            continue
        seg = filt[a.peak : b.peak + 1]
        k = np.flatnonzero(np.sign(seg[:-1]) != np.sign(seg[1:]))
        if k.size == 0:
            continue
        j = a.peak + int(k[0])
        v0, v1 = filt[j], filt[j + 1]
        frac = v0 / (v0 - v1) if v0 != v1 else 0.5
        t_cross = t_eff[j] + frac * (t_eff[j + 1] - t_eff[j])
        amp = 0.5 * (a.value + b.value)
        out.append(
            BranchDetection(
                axial_pos_est=float(pose_track.z_at(t_cross)),
                method="ec_axial",
                confidence=float(min(1.0, amp / (4.0 * threshold))),
                amplitude=float(amp),
                t_us=int(round(t_cross)),
            )
        )
        used.add(id(b))
    return out


def ec_axial_localize(diff: dsp.IQStream, pose_track: PoseTrack, **kw) -> BranchDetection:
    found = ec_axial_localize_all(diff, pose_track, **kw)
    if not found:
        raise NoDetectionError("no differential lobe pair above threshold")
    return max(found, key=lambda d: d.amplitude)


# ---------------------------------------------------------------------------
# eddy current: radial point coil


@dataclass(frozen=True, eq=False)
class ScanGrid:
    """Filtered coil modulus over an axial x circumferential grid (values[iz, itheta]).

    ``theta`` is kept unwrapped so neighbouring cells stay adjacent across 0 deg.
    """

    z: np.ndarray  # m
    theta: np.ndarray  # deg
    values: np.ndarray


def ec_radial_center(grid: ScanGrid) -> tuple[float, float]:
    v = grid.values
    if not np.isfinite(v).all() or np.ptp(v) <= 1e-12 * max(np.abs(v).max(), 1.0):
        raise NoDetectionError("flat radial scan grid")
    iz, it = np.unravel_index(int(np.argmax(v)), v.shape)
    z = float(grid.z[iz])
    if 0 < iz < len(grid.z) - 1:
        z = dsp.refine_peak(list(zip(grid.z[iz - 1 : iz + 2], v[iz - 1 : iz + 2, it])))
    th = float(grid.theta[it])
    if 0 < it < len(grid.theta) - 1:
        th = dsp.refine_peak(list(zip(grid.theta[it - 1 : it + 2], v[iz, it - 1 : it + 2])))
    return float(z), float(th % 360.0)


def ec_radial_scan(
    scenario: PipeScenario,
    z_center: float,
    theta_center: float,
    coil: CoilParams,
    z_half: float = 12.0,
    theta_half: float = 20.0,
    z_step: float = 0.5,
    theta_step: float = 0.5,
    sample_rate: float = 8000.0,
    block: int = 40,
    dwell_blocks: int = 15,
    noise_sigma: float = 0.0,
    seed=None,
    lined: bool | None = None,
    balance_offset: float = 60.0,
) -> ScanGrid:
    """Raster the point coil over the expected hole and build the modulus map.

    A balancing measurement ``balance_offset`` mm away from the hole is
    subtracted from every cell before taking the modulus; each cell dwells
    for ``dwell_blocks`` demodulation blocks and keeps the moving-average
    output at the end of the dwell.
    """
    rng = np.random.default_rng(seed)
    nz = int(round(2 * z_half / z_step)) + 1
    nt = int(round(2 * theta_half / theta_step)) + 1
    zs = z_center + (np.arange(nz) - (nz - 1) / 2.0) * z_step / 1000.0
    ths = theta_center + (np.arange(nt) - (nt - 1) / 2.0) * theta_step
    n = block * dwell_blocks
    t = np.arange(n) / sample_rate
    w = 2.0 * np.pi * coil.excitation_freq * t
    sin_w, cos_w = np.sin(w), np.cos(w)

    def dwell_iq(Z):
        # Z: (...,) complex -> demodulated complex per cell, averaged over the dwell
        Z = np.atleast_1d(Z)
        s = np.abs(Z)[:, None] * coil.excitation_amplitude * np.sin(w[None, :] + np.angle(Z)[:, None])
        if noise_sigma > 0:
            s = s + rng.normal(0.0, noise_sigma, size=s.shape)
        i = (2.0 / block) * (s * sin_w).reshape(len(Z), dwell_blocks, block).sum(axis=2)
        q = (2.0 / block) * (s * cos_w).reshape(len(Z), dwell_blocks, block).sum(axis=2)
        return i + 1j * q  # (cells, blocks)

    ref_z = z_center - balance_offset / 1000.0
    ref = dwell_iq(coil_impedance_many(scenario, ref_z, theta_center, coil, lined)).mean()
    ZZ, TT = np.meshgrid(zs, ths, indexing="ij")
    Z = coil_impedance_many(scenario, ZZ.ravel(), TT.ravel(), coil, lined)
    iq = dwell_iq(Z) - ref
    mod = np.abs(iq)
    filt = np.array([dsp.moving_average(row, dwell_blocks)[-1] for row in mod])
    return ScanGrid(zs, ths, filt.reshape(nz, nt))
