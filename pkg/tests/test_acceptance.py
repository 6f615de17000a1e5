"""Acceptance criteria, one test each, at their stated tolerances.

Every test appends a PASS/FAIL line to the session log; the lines are
printed in the terminal summary.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from bonemill.calibration import VALIDITY_BOX_HI, VALIDITY_BOX_LO, solve_landmark_transform
from bonemill.cli import main
from bonemill.config import ExperimentConfig, from_dict
from bonemill.experiments import default_jobs, derive_seed, episode, run_exp1, run_exp2, run_exp3
from bonemill.perception import NoiseConfig, PerceptionOracle
from bonemill.skull import generate, locate_center
from bonemill.stereo import project_array, reconstruct_array
from bonemill.trajectory import TWO_PI, Trajectory, fit_spline, offset_initial, sample_fitted
from bonemill.transforms import RigidTransform, rotation_angle_between


def report(log, number: int, ok: bool, detail: str) -> None:
    log.append(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def test_c01_reconstruction_round_trip(acceptance_log, k, scene):
    rng = np.random.default_rng(1)
    p = scene.apply(rng.uniform(VALIDITY_BOX_LO, VALIDITY_BOX_HI, size=(10_000, 3)))
    t0 = time.perf_counter()
    err = np.linalg.norm(reconstruct_array(project_array(p, k), k) - p, axis=1).max()
    elapsed = time.perf_counter() - t0
    report(acceptance_log, 1, err < 1e-9 and elapsed < 1.0,
           f"max round-trip error {err:.2e} mm (< 1e-9), {elapsed:.3f} s (< 1 s)")


def test_c02_rigid_solve_recovery(acceptance_log):
    rng = np.random.default_rng(2)
    worst_r = worst_t = 0.0
    proper = True
    for i in range(1000):
        r = Rotation.random(random_state=rng).as_matrix()
        t = rng.uniform(-100, 100, 3)
        src = rng.uniform(-20, 20, size=(5, 3))
        assert np.linalg.svd(src - src.mean(0), compute_uv=False)[1] > 1e-3
        est = solve_landmark_transform(src, src @ r.T + t)
        worst_r = max(worst_r, rotation_angle_between(est.r, r))
        worst_t = max(worst_t, float(np.linalg.norm(est.t - t)))
        proper &= abs(np.linalg.det(est.r) - 1.0) < 1e-12
    report(acceptance_log, 2, worst_r < 1e-9 and worst_t < 1e-9 and proper,
           f"max rotation error {worst_r:.2e} rad, max translation error {worst_t:.2e} mm, det(R)=+1: {proper}")


def test_c03_calibration_under_noise(acceptance_log):
    cfg = ExperimentConfig()
    t0 = time.perf_counter()
    result = run_exp1(cfg)
    elapsed = time.perf_counter() - t0
    med, central = result.median_rmse_3d_mm, result.median_central_rmse_mm
    ok = med <= 1.0 and central <= 0.5 and elapsed < 10.0
    report(acceptance_log, 3, ok,
           f"median 3D RMSE {med:.3f} mm (<= 1.0), central median {central:.3f} mm (<= 0.5), "
           f"median 2D RMSE {result.median_rmse_2d_px:.2f} px, {elapsed:.1f} s (< 10 s)")


def test_c04_center_localization(acceptance_log):
    cfg = ExperimentConfig()
    t0 = time.perf_counter()
    result = run_exp2(cfg)
    elapsed = time.perf_counter() - t0
    rmse = result.center_rmse_px
    ok = abs(rmse - 1.37) <= 0.15 and elapsed < 5.0 and len(result.center_error_px) == 10_000
    report(acceptance_log, 4, ok,
           f"centre RMSE {rmse:.3f} px (1.37 +/- 0.15; bregma {result.bregma_rmse_px:.3f}, "
           f"lambda {result.lambda_rmse_px:.3f}), {elapsed:.2f} s (< 5 s)")


def test_c05_initial_trajectory_geometry(acceptance_log):
    cfg = ExperimentConfig()
    noise = cfg.noise_config()
    s = cfg.episode_settings()
    circle = offset = 0.0
    for seed in range(50):
        skull = generate(seed, cfg.skull)
        oracle = PerceptionOracle(cfg.intrinsics, noise, cfg.scene_transform(), seed)
        center = locate_center(*oracle.observe_landmarks(skull), s.l, skull, cfg.intrinsics)
        fit, normals = sample_fitted(center, s.radius, s.n, skull)
        traj = Trajectory.initial(fit, normals, center, s.radius, s.offset)
        assert traj.n == 32
        circle = max(circle, float(np.abs(np.hypot(*(fit[:, :2] - center[:2]).T) - 2.0).max()))
        offset = max(offset, float(np.abs(np.linalg.norm(traj.current_points - fit, axis=1) - 1.0).max()))
        np.testing.assert_array_equal(offset_initial(fit, normals, s.drill_radius, s.safety_gap), traj.current_points)
    report(acceptance_log, 5, circle <= 1e-12 and offset <= 1e-12,
           f"max circle deviation {circle:.1e} mm, max offset deviation {offset:.1e} mm (<= 1e-12)")


def test_c06_spline_contract(acceptance_log):
    rng = np.random.default_rng(6)
    knot_err = overshoot = seam = 0.0
    frac = np.arange(1001) / 1000
    for i in range(1000):
        closed = i % 2 == 0
        n = int(rng.integers(4, 41))
        knots = rng.normal(size=(n, 3)) * rng.uniform(0.1, 5.0, 3)
        curve = fit_spline(knots, closed=closed)
        at_knots = curve(curve.knots_t[:-1] if closed else curve.knots_t)
        knot_err = max(knot_err, float(np.abs(at_knots - knots).max()))
        t0, t1 = curve.knots_t[:-1], curve.knots_t[1:]
        vals = curve(t0[:, None] + (t1 - t0)[:, None] * frac[1:-1])
        y = np.vstack([knots, knots[:1]]) if closed else knots
        lo = np.minimum(y[:-1], y[1:])[:, None, :]
        hi = np.maximum(y[:-1], y[1:])[:, None, :]
        overshoot = max(overshoot, float(np.maximum(lo - vals, vals - hi).max()))
        if closed:
            seam = max(seam, float(np.abs(curve(0.0) - curve(TWO_PI)).max()),
                       float(np.abs(curve.derivative(0.0) - curve.derivative(TWO_PI)).max()))
    ok = knot_err == 0.0 and overshoot <= 1e-12 and seam <= 1e-9
    report(acceptance_log, 6, ok,
           f"knot error {knot_err:.1e}, worst excursion beyond knot bounds {overshoot:.1e}, seam C1 gap {seam:.1e}")


def test_c07_zero_noise_success(acceptance_log):
    cfg = ExperimentConfig()
    bound = cfg.damper.v_max * cfg.damper.dt
    t0 = time.perf_counter()
    outcomes = [episode(cfg, derive_seed(cfg.seed, 0xE3, e), NoiseConfig.zero(), record_trace=False)[0]
                for e in range(50)]
    elapsed = time.perf_counter() - t0
    ok_count = sum(o.success for o in outcomes)
    worst = max(o.max_overshoot_mm for o in outcomes)
    ok = ok_count == 50 and worst <= bound and elapsed < 60.0
    report(acceptance_log, 7, ok,
           f"{ok_count}/50 succeeded, max overshoot {worst:.4f} mm (<= {bound:.4f}), {elapsed:.1f} s (< 60 s)")


def test_c08_stuck_fault_breaks_membrane(acceptance_log):
    base = from_dict({"exp3": {"fault_rate": 1.0, "mape_levels_pct": [0.0, 24.32]}, "episodes": 25})
    result = run_exp3(base, jobs=default_jobs())
    kinds = [r.outcome.failure_kind for r in result.records]
    n_damage = kinds.count("membrane_damage")
    report(acceptance_log, 8, n_damage == len(kinds) and len(kinds) == 50,
           f"{n_damage}/{len(kinds)} faulted episodes ended in membrane_damage")


def test_c09_noise_degradation(acceptance_log):
    cfg = from_dict({"episodes": 200})
    result = run_exp3(cfg, jobs=default_jobs())
    rates = [row["success_rate"] for row in result.aggregate()]
    ok = len(rates) == 4 and all(b <= a for a, b in zip(rates, rates[1:]))
    levels = ", ".join(f"{m:g}%: {r:.3f}" for m, r in zip(result.levels(), rates))
    report(acceptance_log, 9, ok, f"success rate by completion MAPE {levels} (non-increasing)")


def test_c10_determinism(acceptance_log, tmp_path: Path):
    commands = {
        "run": ["run", "--seed", "17"],
        "exp3": ["exp3", "--episodes", "4", "--set", "exp3.mape_levels_pct=[0, 40]"],
    }
    same = True
    for name, args in commands.items():
        dirs = [tmp_path / f"{name}_{i}" for i in range(3)]
        for out, jobs in zip(dirs, ("1", "2", "1")):
            assert main([*args, "--jobs", jobs, "--out", str(out)]) in (0, 4)
        for f in sorted(p.name for p in dirs[0].iterdir()):
            same &= all((d / f).read_bytes() == (dirs[0] / f).read_bytes() for d in dirs[1:])
    report(acceptance_log, 10, same, "trace and episode files byte-identical across repeats and --jobs 1/2")
