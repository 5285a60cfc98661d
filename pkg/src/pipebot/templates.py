"""Built-in scenario templates."""
from __future__ import annotations

from .errors import UsageError
from .world import ScenarioConfig

# consecutive spacings (m) of the seven-branch distance test pipe
TABLE1_SPACINGS = (0.23, 0.308, 0.265, 0.63, 1.635, 1.50)


def _branch(z, theta, d=20.0):
    return {
        "axial_pos_m": round(z, 6),
        "angular_pos_deg": theta,
        "hole_diameter_mm": d,
        "valve_axis_offset_mm": 0.0,
        "valve_depth_mm": 30.0,
        "hardware_present": True,
    }


def lab8m() -> ScenarioConfig:
    """8 m lab pipe with two Ø20 branches, one on top and one at 90 deg."""
    return ScenarioConfig(
        length_m=8.0,
        pipe_id="lab8m",
        branches=[_branch(3.0, 0.0), _branch(4.635, 90.0)],
    )


def table1() -> ScenarioConfig:
    zs = [0.5]
    for s in TABLE1_SPACINGS:
        zs.append(zs[-1] + s)
    angles = [0.0, 90.0, 180.0, 270.0, 45.0, 135.0, 315.0]
    return ScenarioConfig(
        length_m=5.6,
        pipe_id="table1",
        branches=[_branch(z, a) for z, a in zip(zs, angles)],
    )


TEMPLATES = {"lab8m": lab8m, "table1": table1}


def get_template(name: str) -> ScenarioConfig:
    try:
        return TEMPLATES[name]()
    except KeyError:
        raise UsageError(f"unknown template {name!r}; choose from {', '.join(sorted(TEMPLATES))}") from None
