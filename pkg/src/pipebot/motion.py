"""Linear-rail delta kinematics, the 400 deg rotation stage and traction limits.

Delta frame: the three ballscrew rails are parallel to +z (pointing from the
pipe wall toward the pipe axis) and sit at 120 deg on a circle of
``rail_radius``. The tool tip hangs ``tool_offset`` below the effector, so
cutting into the wall means decreasing tool z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import KinematicError, RotationRangeError, TravelLimitError, UnreachableError

ROLL_MIN, ROLL_MAX = 0.0, 400.0

# rated traction points (speed m/s, force N)
TRACTION_POINTS = ((0.05, 510.0), (0.10, 370.0))
PANTOGRAPH_RANGE_MM = (75.0, 120.0)
PANTOGRAPH_FORCE_N = 300.0


@dataclass(frozen=True)
class DeltaGeometry:
    rail_radius: float = 22.0
    rod_length: float = 40.0
    carriage_travel: tuple[float, float] = (0.0, 120.0)
    tool_offset: float = 30.0
    rail_angles: tuple[float, float, float] = (90.0, 210.0, 330.0)

    def __post_init__(self):
        lo, hi = self.carriage_travel
        if not hi > lo:
            raise ValueError("empty carriage travel")
        if self.rod_length <= 0 or self.rail_radius <= 0:
            raise ValueError("rod length and rail radius must be positive")

    @property
    def rails(self) -> np.ndarray:
        a = np.deg2rad(self.rail_angles)
        return np.column_stack([self.rail_radius * np.cos(a), self.rail_radius * np.sin(a)])


def delta_ik(geom: DeltaGeometry, tool, check_travel: bool = True) -> np.ndarray:
    """Carriage positions (mm along each rail) that put the tool tip at ``tool``."""
    x, y, z = (float(v) for v in tool)
    ez = z + geom.tool_offset
    d2 = (x - geom.rails[:, 0]) ** 2 + (y - geom.rails[:, 1]) ** 2
    h2 = geom.rod_length**2 - d2
    if np.any(h2 < 0):
        raise UnreachableError(f"tool point {tool} is beyond rod reach")
    c = ez + np.sqrt(h2)
    lo, hi = geom.carriage_travel
    if check_travel and (np.any(c < lo) or np.any(c > hi)):
        raise TravelLimitError(f"carriages {c} outside travel [{lo}, {hi}]")
    return c


def delta_fk(geom: DeltaGeometry, carriages) -> np.ndarray:
    """Tool tip for three carriage positions (intersection of the rod spheres)."""
    c = np.asarray(carriages, dtype=float)
    lo, hi = geom.carriage_travel
    if np.any(c < lo - 1e-9) or np.any(c > hi + 1e-9):
        raise TravelLimitError(f"carriages {c} outside travel [{lo}, {hi}]")
    P = np.column_stack([geom.rails, c])
    L = geom.rod_length
    p21 = P[1] - P[0]
    d = np.linalg.norm(p21)
    ex = p21 / d
    p31 = P[2] - P[0]
    i = ex @ p31
    ey_raw = p31 - i * ex
    j = np.linalg.norm(ey_raw)
    if j == 0:
        raise KinematicError("degenerate rail layout")
    ey = ey_raw / j
    ez = np.cross(ex, ey)
    x = d / 2.0
    y = (i * i + j * j) / (2.0 * j) - (i / j) * x
    z2 = L * L - x * x - y * y
    if z2 < 0:
        raise KinematicError("rod spheres do not intersect")
    base = P[0] + x * ex + y * ey
    cand = (base + math.sqrt(z2) * ez, base - math.sqrt(z2) * ez)
    eff = min(cand, key=lambda p: p[2])  # effector hangs below the carriages
    return eff - np.array([0.0, 0.0, geom.tool_offset])


@dataclass(frozen=True)
class RotationPlan:
    direction: int  # +1, -1 or 0
    travel: float  # signed deg


def rotate_plan(current_roll: float, target_roll: float) -> RotationPlan:
    """Move between two stage angles; the stage has hard stops at 0 and 400 deg."""
    for a in (current_roll, target_roll):
        if not ROLL_MIN <= a <= ROLL_MAX:
            raise RotationRangeError(f"roll {a} outside [{ROLL_MIN}, {ROLL_MAX}]")
    travel = float(target_roll - current_roll)
    return RotationPlan(int(np.sign(travel)), travel)


def roll_for_angle(current_roll: float, angle_deg: float) -> float:
    """Stage angle reaching world angle ``angle_deg`` with the least travel."""
    a = angle_deg % 360.0
    candidates = [r for r in (a, a + 360.0) if r <= ROLL_MAX]
    return min(candidates, key=lambda r: abs(r - current_roll))


def available_traction(speed: float) -> float:
    (v0, f0), (v1, f1) = TRACTION_POINTS
    return float(np.interp(speed, [v0, v1], [f0, f1]))


def traction_check(speed: float, required_force: float) -> bool:
    if speed <= 0:
        raise ValueError("speed must be positive")
    return required_force <= available_traction(speed)


def pantograph_fits(bore_diameter_mm: float) -> bool:
    lo, hi = PANTOGRAPH_RANGE_MM
    return lo <= bore_diameter_mm <= hi
