import math

import numpy as np
import pytest

from pipebot import dsp
from pipebot.errors import NoDetectionError, NoHoleError
from pipebot.perception import (
    BranchDetection,
    ComplianceLimits,
    HoleCharacterization,
    ScanGrid,
    assess_compliance,
    compare_reconstructions,
    cylinder_residuals,
    detect_branches_front,
    ec_axial_localize,
    ec_axial_localize_all,
    ec_radial_center,
    ec_radial_scan,
    fit_circle,
    fit_hole,
    front_regions,
    inter_branch_distances,
    reconstruct_cloud,
)
from pipebot.sensors import (
    CoilParams,
    PoseTrack,
    RobotPose,
    encircling_coil,
    run_profile_scan,
    sample_front_laser,
    synthesize_ec_raw,
)
from pipebot.world import BranchConnection, PipeScenario, hole_overlap_many

from oracles import grid_circle_fit


def _rings(sc, step_mm=1.0, lookahead=100.0, noise=0.0, seed=0):
    n = int((sc.length - lookahead / 1000) * 1000 / step_mm) + 1
    z = np.arange(n) * step_mm / 1000
    rng = np.random.default_rng(seed)
    return [(sample_front_laser(sc, float(zk), lookahead, noise, rng), float(zk)) for zk in z]


def test_front_empty_pipe():
    assert detect_branches_front(_rings(PipeScenario(length=1.0))) == []
    assert detect_branches_front([]) == []


def test_front_single_branch_rear_wall():
    sc = PipeScenario(length=4.0, branches=(BranchConnection(3.0, 120.0),))
    det = detect_branches_front(_rings(sc))
    assert len(det) == 1
    assert det[0].rear_wall_flag
    assert det[0].axial_pos_est == pytest.approx(3.0 + 0.010, abs=0.001)
    assert det[0].angular_pos_est == pytest.approx(120.0, abs=0.5)


def test_front_wraps_through_zero():
    sc = PipeScenario(length=2.0, branches=(BranchConnection(1.0, 0.0),))
    det = detect_branches_front(_rings(sc))
    assert len(det) == 1
    assert min(det[0].angular_pos_est, 360 - det[0].angular_pos_est) < 0.5


def test_front_regions_reusable():
    sc = PipeScenario(length=2.0, branches=(BranchConnection(0.6, 10.0), BranchConnection(1.4, 200.0)))
    rings = _rings(sc)
    regs = front_regions([r for r, _ in rings])
    shifted = [(r, z * 1.01) for r, z in rings]
    assert detect_branches_front(shifted, regs) == detect_branches_front(shifted)


def test_distances():
    d = [BranchDetection(1.0, "front_laser"), BranchDetection(2.635, "front_laser")]
    assert inter_branch_distances(d) == [pytest.approx(1.635)]
    sc = PipeScenario(length=3.0, branches=(BranchConnection(1.0, 0.0), BranchConnection(2.635, 45.0)))
    got = inter_branch_distances(detect_branches_front(_rings(sc)))
    assert abs(got[0] - 1.635) <= 0.001 + 1e-9


def test_plain_bore_cloud_radius():
    sc = PipeScenario(length=2.0)
    cloud = reconstruct_cloud(run_profile_scan(sc, RobotPose(1.0), 5.0))
    r = np.hypot(cloud.points[:, 0], cloud.points[:, 1])
    assert np.all(np.abs(r - 50.0) <= 1e-9)
    assert np.max(np.abs(cylinder_residuals(cloud))) <= 1e-9


def test_cloud_over_branch_two_radii():
    sc = PipeScenario(length=2.0, branches=(BranchConnection(1.0, 0.0),))
    cloud = reconstruct_cloud(run_profile_scan(sc, RobotPose(1.0), 1.0, sweep=40.0))
    r = np.round(np.hypot(cloud.points[:, 0], cloud.points[:, 1]), 9)
    assert set(np.unique(r)) == {50.0, 80.0}


def test_cylinder_residual_noise():
    sc = PipeScenario(length=2.0)
    cloud = reconstruct_cloud(run_profile_scan(sc, RobotPose(1.0), 3.0, noise_sigma=0.3, seed=2))
    rms = float(np.sqrt(np.mean(cylinder_residuals(cloud) ** 2)))
    assert 0.25 <= rms <= 0.35


def test_fit_circle_matches_grid_oracle():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 2 * np.pi, 80)
    x = 3.2 + 10 * np.cos(a) + rng.normal(0, 0.2, 80)
    y = -1.7 + 10 * np.sin(a) + rng.normal(0, 0.2, 80)
    xc, yc, r, _ = fit_circle(x, y)
    ox, oy, orad = grid_circle_fit(x, y)
    assert xc == pytest.approx(ox, abs=2e-3)
    assert yc == pytest.approx(oy, abs=2e-3)
    assert r == pytest.approx(orad, abs=2e-3)


def _scan_hole(branch, roll, sweep=40.0, noise=0.0, seed=None, z=None):
    sc = PipeScenario(length=2.0, branches=(branch,))
    pose = RobotPose(branch.axial_pos if z is None else z, roll)
    scan = run_profile_scan(sc, pose, 1.0, noise_sigma=noise, seed=seed, sweep=sweep, window=60.0)
    return reconstruct_cloud(scan)


def test_fit_hole_noiseless():
    h = fit_hole(_scan_hole(BranchConnection(1.0, 90.0), 70.0))
    assert h.diameter_est == pytest.approx(20.0, abs=0.05)
    assert h.center_theta == pytest.approx(90.0, abs=0.1)
    assert h.center_z == pytest.approx(1.0, abs=1e-4)
    assert h.valve_axis_offset_est == pytest.approx(0.0, abs=1e-6)


def test_fit_hole_full_turn_across_zero():
    h = fit_hole(_scan_hole(BranchConnection(1.0, 0.0), 0.0, sweep=360.0))
    assert min(h.center_theta, 360 - h.center_theta) < 0.1
    assert h.diameter_est == pytest.approx(20.0, abs=0.05)


def test_fit_hole_valve_offset():
    h = fit_hole(_scan_hole(BranchConnection(1.0, 200.0, valve_axis_offset=3.0), 180.0))
    assert h.valve_axis_offset_est == pytest.approx(3.0, abs=0.5)


def test_fit_hole_noisy_center():
    R = 50.0
    for seed in range(20):
        h = fit_hole(_scan_hole(BranchConnection(1.0, 45.0), 25.0, noise=0.3, seed=seed, z=1.0013))
        assert abs(h.center_z - 1.0) * 1000 <= 0.5
        assert abs(h.center_theta - 45.0) * math.pi / 180 * R <= 0.5


def test_fit_hole_without_hole():
    with pytest.raises(NoHoleError):
        fit_hole(reconstruct_cloud(run_profile_scan(PipeScenario(length=2.0), RobotPose(1.0), 1.0, sweep=20)))


def test_compare_reconstructions():
    b = BranchConnection(1.0, 90.0)
    a = _scan_hole(b, 70.0)
    assert compare_reconstructions(a, a).max == 0.0
    # shifted by half a cell: the worst nearest neighbour is half the cell diagonal at the valve radius
    c = _scan_hole(b, 70.5, z=1.0003)
    half_diag = math.hypot(80.0 * math.pi / 360.0, 0.1)
    st = compare_reconstructions(a, c)
    assert st.mean <= st.max <= half_diag + 1e-9


def test_compliance_rules():
    lim = ComplianceLimits(5.0, 15.0, 30.0)
    h = HoleCharacterization(1.0, 0.0, 20.0, 0.0, 0.1)
    assert assess_compliance(h, lim).compliant
    bad = assess_compliance(HoleCharacterization(1.0, 0.0, 20.0, 8.0, 0.1), lim)
    assert (bad.compliant, bad.reason) == (False, "axis_offset_exceeds")
    big = assess_compliance(HoleCharacterization(1.0, 0.0, 40.0, 0.0, 0.1), lim)
    assert (big.compliant, big.reason) == (False, "diameter_out_of_range")


# ---------------------------------------------------------------------------
# eddy current


def _axial_run(sc, speed=0.10, z0=0.8, z1=1.2, noise=0.0, seed=0, spacing=30.0):
    a = encircling_coil(50.0, axial_offset=spacing / 2)
    b = encircling_coil(50.0, axial_offset=-spacing / 2)
    tr = PoseTrack.constant_speed(z0, z1, speed, t0_us=5_000)
    rng = np.random.default_rng(seed)
    ia = dsp.lock_in_demodulate(synthesize_ec_raw(sc, tr, a, seed=rng, noise_sigma=noise))
    ib = dsp.lock_in_demodulate(synthesize_ec_raw(sc, tr, b, seed=rng, noise_sigma=noise))
    return dsp.differential(ia, ib), tr


def test_axial_symmetric_pair_noiseless():
    sc = PipeScenario(length=2.0, branches=(BranchConnection(1.0, 30.0),)).with_liner()
    diff, tr = _axial_run(sc)
    det = ec_axial_localize(diff, tr)
    spacing_mm = 0.10 * 40 / 8000 * 1000
    assert abs(det.axial_pos_est - 1.0) * 1000 <= spacing_mm / 2


def test_axial_matches_dense_overlap_difference():
    # oracle: zero of the densely sampled overlap difference between the two coils
    sc = PipeScenario(length=2.0, branches=(BranchConnection(1.0, 0.0, 24.4),))
    diff, tr = _axial_run(sc, spacing=26.0)
    det = ec_axial_localize(diff, tr)
    zz = np.linspace(0.95, 1.05, 100_001)
    circ = 2 * math.pi * 50.0
    d = hole_overlap_many(sc, zz + 0.013, 0.0, 20.0, circ) - hole_overlap_many(sc, zz - 0.013, 0.0, 20.0, circ)
    core = np.abs(zz - 1.0) < 0.01
    k = np.flatnonzero(np.diff(np.sign(d[core])) != 0)
    z_star = zz[core][k[0]]
    assert abs(det.axial_pos_est - z_star) <= 0.10 * 40 / 8000


def test_axial_two_branches_hardware_independent():
    for hw in (True, False):
        sc = PipeScenario(
            length=2.0,
            branches=(BranchConnection(0.9, 0.0, hardware_present=hw), BranchConnection(1.1, 180.0, hardware_present=hw)),
        ).with_liner()
        found = ec_axial_localize_all(*_axial_run(sc, noise=0.05, seed=3))
        assert len(found) == 2
        assert abs(found[0].axial_pos_est - 0.9) <= 0.002
        assert abs(found[1].axial_pos_est - 1.1) <= 0.002


def test_axial_liftoff_attenuation():
    bare = PipeScenario(length=2.0, branches=(BranchConnection(1.0, 0.0),))
    a = ec_axial_localize(*_axial_run(bare))
    b = ec_axial_localize(*_axial_run(bare.with_liner()))
    assert b.amplitude / a.amplitude == pytest.approx(math.exp(-10 * 0.05), rel=1e-9)
    assert b.axial_pos_est == pytest.approx(a.axial_pos_est, abs=1e-9)


def test_axial_plain_wall_no_detection():
    diff, tr = _axial_run(PipeScenario(length=2.0).with_liner(), noise=0.05)
    assert ec_axial_localize_all(diff, tr) == []
    with pytest.raises(NoDetectionError):
        ec_axial_localize(diff, tr)


def test_radial_center_noiseless():
    sc = PipeScenario(length=2.0, branches=(BranchConnection(1.0, 123.0),)).with_liner()
    grid = ec_radial_scan(sc, 1.0032, 120.7, CoilParams())
    z, th = ec_radial_center(grid)
    assert abs(z - 1.0) * 1000 <= 0.5
    assert abs(th - 123.0) <= 1.0


def test_radial_center_on_node():
    sc = PipeScenario(length=2.0, branches=(BranchConnection(1.0, 0.0),)).with_liner()
    grid = ec_radial_scan(sc, 1.0, 0.0, CoilParams())
    z, th = ec_radial_center(grid)
    assert z == pytest.approx(1.0, abs=1e-9)
    assert min(th, 360.0 - th) == pytest.approx(0.0, abs=1e-6)


def test_radial_aligned_beats_offset():
    sc = PipeScenario(length=2.0, branches=(BranchConnection(1.0, 0.0),)).with_liner()
    grid = ec_radial_scan(sc, 1.0, 0.0, CoilParams(), z_half=10, theta_half=10, z_step=10, theta_step=10)
    aligned = grid.values[1, 1]
    assert aligned > grid.values[0, 1] and aligned > grid.values[1, 0]


def test_radial_flat_grid():
    g = ScanGrid(np.arange(3.0), np.arange(3.0), np.ones((3, 3)))
    with pytest.raises(NoDetectionError):
        ec_radial_center(g)
