import numpy as np
import pytest

from pipebot.errors import JamAbortError, SpindleLimitError
from pipebot.machining import (
    MATERIALS,
    Segment,
    Toolpath,
    jam_risk,
    plan_bore,
    plan_pe_drill,
    simulate_machining,
    validate_toolpath,
)
from pipebot.motion import DeltaGeometry, delta_ik
from pipebot.world import BranchConnection, PipeScenario

from oracles import bore_duration_closed_form

SC = PipeScenario(length=4.0, branches=(BranchConnection(2.0, 0.0, 20.0),))


def test_bore_duration_calibrated():
    tp = plan_bore(20.0, 24.4, "cast_iron")
    assert 24 * 60 <= tp.predicted_duration <= 36 * 60
    p = MATERIALS["cast_iron"]
    expected = bore_duration_closed_form(20.0, 24.4, p.tool_diameter, p.feed, p.radial_doc, p.helix_pitch,
                                         p.cut_depth, p.approach, p.rapid_feed)
    assert tp.predicted_duration == pytest.approx(expected, rel=1e-12)


def test_bore_loads_within_limits():
    tp = plan_bore(20.0, 24.4)
    assert tp.max_force_per_screw <= 350.0
    assert tp.max_torque <= 0.5
    assert tp.max_rpm <= 8000.0


def test_toolpath_reachable():
    g = DeltaGeometry()
    for pt in plan_bore(20.0, 24.4).points():
        delta_ik(g, pt)


def test_bore_noop():
    tp = plan_bore(24.4, 24.4)
    assert tp.segments == () and tp.predicted_duration == 0.0


def test_pe_drill_and_ream_durations():
    tp, risk = plan_pe_drill(23.0)
    assert risk == 0.0
    drill = sum(s.duration for s in tp.segments[:4])
    ream = tp.predicted_duration - drill
    assert 0.8 * 9 * 60 <= drill <= 1.2 * 9 * 60
    assert 3.2 * 60 <= ream <= 4.8 * 60


def test_jam_risk_band():
    for rpm in np.linspace(2800, 3500, 15):
        assert jam_risk(rpm) == 0.0
    assert jam_risk(1200) > 0.0
    with pytest.raises(SpindleLimitError):
        plan_pe_drill(23.0, rpm=9000.0)


def test_simulate_cast_iron_sets_diameter():
    out, sc = simulate_machining(SC, 0, plan_bore(20.0, 24.4), seed=1)
    assert sc.branches[0].hole_diameter == 24.4
    assert out.final_diameter == 24.4
    assert not out.jam_occurred


def test_simulate_empty_toolpath_unchanged():
    out, sc = simulate_machining(SC, 0, plan_bore(20.0, 20.0), seed=1)
    assert sc == SC and out.duration == 0.0


def test_certain_jam_aborts():
    plunge = Segment("line", (0, 0, 0), (0, 0, -11), feed=0.02, spindle_rpm=0.0, plunge=True)
    tp = Toolpath((plunge,), "hdpe", 0.0, 20.0, 20.0)
    assert jam_risk(0.0) == 1.0
    with pytest.raises(JamAbortError):
        simulate_machining(SC.with_liner(), 0, tp, seed=0, retries=0)


def test_jam_retry_at_higher_rpm():
    # 2600 rpm jams 7% of the time; one retry at +300 rpm is in the safe band
    tp, risk = plan_pe_drill(20.0, rpm=2600.0)
    assert 0 < risk < 0.1
    jams = 0
    for seed in range(200):
        out, _ = simulate_machining(SC.with_liner(), 0, tp, seed=seed, retries=1)
        jams += out.jam_occurred
        assert out.retries_used == int(out.jam_occurred)
    assert 0 < jams < 40


def test_pe_opening_added():
    tp, _ = plan_pe_drill(23.0)
    out, sc = simulate_machining(SC.with_liner(), 0, tp, seed=0, site=(2.0005, 0.4))
    (op,) = sc.liner.openings
    assert (op.axial_pos, op.angular_pos, op.diameter) == (2.0005, 0.4, 23.0)


def test_validate_rejects_fast_spindle():
    seg = Segment("line", (0, 0, 0), (0, 0, -1), feed=1.0, spindle_rpm=9000.0)
    with pytest.raises(SpindleLimitError):
        validate_toolpath(Toolpath((seg,), "cast_iron", 20, 20, 12))
