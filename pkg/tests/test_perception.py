from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bonemill.errors import ConfigError, OutOfView
from bonemill.perception import (
    Fault,
    NoiseConfig,
    PerceptionOracle,
    completion_mape,
    detect_drill_tip,
    detect_landmarks,
    keypoint_sigma_at,
    keypoint_sigma_for_rmse,
    landmark_pixels,
    recognize_completion,
)
from bonemill.skull import SkullParams, center_pixel, generate
from bonemill.stereo import project_array


@pytest.fixture
def skull():
    return generate(0)


def test_zero_noise_tip_is_exact(k, rng):
    tip = np.array([1.0, -2.0, 3.0])
    obs = detect_drill_tip(tip, k, NoiseConfig.zero(), rng)
    np.testing.assert_array_equal(obs.as_array(), project_array(tip[None], k)[0])


def test_tip_noise_recovers_sigma(k, rng):
    noise = NoiseConfig(keypoint_sigma_px=3.18)
    tip = np.array([0.5, 0.5, 1.0])
    exact = project_array(tip[None], k)[0]
    draws = np.array([detect_drill_tip(tip, k, noise, rng).as_array() for _ in range(10_000)])
    per_axis = np.sqrt(np.mean((draws - exact) ** 2, axis=0))
    np.testing.assert_allclose(per_axis, 3.18, rtol=0.05)


def test_tip_out_of_view(k, rng):
    with pytest.raises(OutOfView):
        detect_drill_tip([40.0, 0.0, 0.0], k, NoiseConfig.zero(), rng)


def test_periphery_ramp_scales_sigma(k):
    noise = NoiseConfig(keypoint_sigma_px=1.0, periphery_ramp=4.0)
    centre = keypoint_sigma_at(np.array([480, 270, 480, 270.0]), k, noise)
    edge = keypoint_sigma_at(np.array([960, 270, 960, 270.0]), k, noise)
    np.testing.assert_allclose(centre, 1.0)
    np.testing.assert_allclose(edge, 5.0)


def test_sigma_for_rmse_matches_monte_carlo(k, scene, rng):
    sigma = keypoint_sigma_for_rmse(3.18, 4.0, k, scene)
    noise = NoiseConfig(keypoint_sigma_px=sigma, periphery_ramp=4.0)
    pts = rng.uniform([0, -20, 0], [10, 0, 10], size=(4000, 3))
    exact = project_array(scene.apply(pts), k)
    errs = []
    for tip, ex in zip(scene.apply(pts), exact):
        d = detect_drill_tip(tip, k, noise, rng).as_array() - ex
        errs += [math.hypot(d[0], d[1]), math.hypot(d[2], d[3])]
    assert np.sqrt(np.mean(np.square(errs))) == pytest.approx(3.18, rel=0.03)


def test_landmarks_zero_noise(k, skull, rng):
    b, l = detect_landmarks(skull, k, NoiseConfig.zero(), rng)
    b_true, l_true = landmark_pixels(skull, k)
    np.testing.assert_array_equal(b, b_true)
    np.testing.assert_array_equal(l, l_true)


def test_landmark_off_screen(k, rng):
    far = generate(0, SkullParams(extent=(-8, 8, -40, 40), landmark_spacing=60))
    with pytest.raises(OutOfView):
        detect_landmarks(far, k, NoiseConfig.zero(), rng)


def _centre_rmse(k, skull, noise, trials, l=1 / 3):
    rng = np.random.default_rng(7)
    b0, l0 = landmark_pixels(skull, k)
    c0 = center_pixel(b0, l0, l)
    err = [center_pixel(*detect_landmarks(skull, k, noise, rng), l) - c0 for _ in range(trials)]
    return float(np.sqrt(np.mean(np.sum(np.square(err), axis=1))))


@pytest.mark.parametrize(
    "correlation, expected",
    [
        # independent errors add in quadrature
        (0.0, math.hypot(2 / 3 * 1.19, 1 / 3 * 1.73)),
        # fully correlated errors add linearly
        (1.0, 2 / 3 * 1.19 + 1 / 3 * 1.73),
    ],
)
def test_weighted_centre_rmse(k, skull, correlation, expected):
    noise = NoiseConfig(landmark_sigma_px=(1.19 / math.sqrt(2), 1.73 / math.sqrt(2)), landmark_correlation=correlation)
    assert _centre_rmse(k, skull, noise, 10_000) == pytest.approx(expected, rel=0.03)


def test_completion_identity_without_noise(rng):
    c = rng.uniform(size=32)
    np.testing.assert_array_equal(recognize_completion(c, NoiseConfig.zero(), 0, rng), c)


def test_completion_mape_calibration(rng):
    noise = NoiseConfig(completion_mape=0.2432)
    truth = rng.uniform(0.1, 0.9, size=(10_000, 32))
    reported = recognize_completion(truth, noise, 0, rng)
    assert abs(completion_mape(reported, truth) - 0.2432) <= 0.02


def test_fault_script_overrides(rng):
    noise = NoiseConfig(completion_mape=0.3, fault_script=(Fault(sample=7, value=0.8),))
    out = recognize_completion(np.ones(32), noise, 5, rng)
    assert out[7] == 0.8
    scoped = NoiseConfig(fault_script=(Fault(sample=7, value=0.8, start=10, stop=20),))
    assert recognize_completion(np.ones(32), scoped, 9, rng)[7] == 1.0
    assert recognize_completion(np.ones(32), scoped, 10, rng)[7] == 0.8
    assert recognize_completion(np.ones(32), scoped, 20, rng)[7] == 1.0


def test_penetration_passes_through_noise(rng):
    noise = NoiseConfig(completion_mape=0.4)
    c = np.array([0.999, 1.0, 0.5])
    out = recognize_completion(c, noise, 0, rng)
    assert out[0] == 0.999 and out[1] == 1.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=64), st.floats(0, 2), st.integers(0, 10**6))
def test_completion_stays_clamped(values, mape, seed):
    out = recognize_completion(np.array(values), NoiseConfig(completion_mape=mape), 0, np.random.default_rng(seed))
    assert np.all((out >= 0) & (out <= 1))


def test_oracle_completion_depends_on_seed_and_tick_only(k, scene):
    noise = NoiseConfig(completion_mape=0.2)
    a = PerceptionOracle(k, noise, scene, seed=3)
    b = PerceptionOracle(k, noise, scene, seed=3)
    truth = np.linspace(0.1, 0.9, 32)
    b.completion(truth, 1)  # extra call must not shift later draws
    np.testing.assert_array_equal(a.completion(truth, 4), b.completion(truth, 4))
    assert not np.array_equal(a.completion(truth, 4), a.completion(truth, 5))


def test_random_faults(k, scene):
    assert PerceptionOracle(k, NoiseConfig(fault_rate=0.0), scene, 1).random_faults(32) == ()
    faults = PerceptionOracle(k, NoiseConfig(fault_rate=1.0), scene, 1).random_faults(32)
    assert len(faults) == 1
    f = faults[0]
    assert 0 <= f.sample < 32 and 0.6 <= f.value <= 0.95 and f.start == 0 and f.stop is None


@pytest.mark.parametrize(
    "kwargs",
    [
        {"keypoint_sigma_px": -1},
        {"landmark_sigma_px": (1.0,)},
        {"completion_mape": -0.1},
        {"fault_rate": 1.5},
        {"landmark_correlation": 2.0},
        {"fault_script": (Fault(0, 1.5),)},
    ],
)
def test_noise_config_validation(kwargs):
    with pytest.raises(ConfigError):
        NoiseConfig(**kwargs)
