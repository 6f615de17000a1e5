"""Ground-truth-plus-noise stand-ins for the learned detectors.

Three detectors are modelled:

* drill-tip keypoints in both stereo images (used for calibration),
* bregma/lambda landmarks in the left image (used for centre localisation),
* per-sample completion levels along the milling ring.

Every draw comes from an explicit :class:`numpy.random.Generator`. The
:class:`PerceptionOracle` derives independent generators per stream from a
single seed, so results do not depend on call order across streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, OutOfView
from .stereo import (
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    CameraIntrinsics,
    PixelPoint,
    StereoObservation,
    in_image,
    normalized_radius,
    project_array,
    xy_to_left_pixel,
)
from .transforms import RigidTransform

# Completion MAPE is only meaningful away from zero.
MAPE_FLOOR = 0.05

_STREAM_KEYPOINT = 1
_STREAM_LANDMARK = 2
_STREAM_COMPLETION = 3
_STREAM_FAULT = 4


@dataclass(frozen=True)
class Fault:
    """Pin one sample's recognised completion to ``value`` for ticks in ``[start, stop)``."""

    sample: int
    value: float
    start: int = 0
    stop: int | None = None

    def active(self, tick: int) -> bool:
        return tick >= self.start and (self.stop is None or tick < self.stop)


@dataclass(frozen=True)
class NoiseConfig:
    """Noise levels for all three detectors.

    ``keypoint_sigma_px`` is the per-axis standard deviation at the principal
    point; away from it the deviation grows as ``1 + periphery_ramp * rho``
    with ``rho`` the elliptical image radius. ``landmark_sigma_px`` holds the
    per-axis deviations for (bregma, lambda). ``completion_mape`` is a
    fraction (0.2432 for 24.32 %). Completion readings at or above
    ``completion_cue_level`` are reported without noise: the optical change at
    penetration is a strong cue. ``fault_rate`` is the per-episode probability
    of a random stuck-below-one saturation fault.
    """

    keypoint_sigma_px: float = 0.0
    periphery_ramp: float = 0.0
    landmark_sigma_px: tuple[float, float] = (0.0, 0.0)
    landmark_correlation: float = 0.0
    completion_mape: float = 0.0
    completion_cue_level: float = 0.999
    fault_script: tuple[Fault, ...] = field(default_factory=tuple)
    fault_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "landmark_sigma_px", tuple(float(s) for s in self.landmark_sigma_px))
        object.__setattr__(
            self, "fault_script", tuple(f if isinstance(f, Fault) else Fault(**f) for f in self.fault_script)
        )
        if len(self.landmark_sigma_px) != 2:
            raise ConfigError("noise.landmark_sigma_px must be a (bregma, lambda) pair")
        for name in ("keypoint_sigma_px", "periphery_ramp", "completion_mape"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"noise.{name} must be >= 0")
        if min(self.landmark_sigma_px) < 0:
            raise ConfigError("noise.landmark_sigma_px must be >= 0")
        if not -1.0 <= self.landmark_correlation <= 1.0:
            raise ConfigError("noise.landmark_correlation must lie in [-1, 1]")
        if not 0.0 < self.completion_cue_level <= 1.0:
            raise ConfigError("noise.completion_cue_level must lie in (0, 1]")
        if not 0.0 <= self.fault_rate <= 1.0:
            raise ConfigError("noise.fault_rate must lie in [0, 1]")
        for f in self.fault_script:
            if not 0.0 <= f.value <= 1.0:
                raise ConfigError("fault value must lie in [0, 1]")

    @property
    def completion_sigma(self) -> float:
        """Std of the Gaussian relative error whose mean absolute value is the MAPE."""
        return self.completion_mape * math.sqrt(math.pi / 2.0)

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls()


def keypoint_sigma_at(obs: np.ndarray, k: CameraIntrinsics, noise: NoiseConfig) -> np.ndarray:
    """Per-axis keypoint deviation for the left and right pixel of each observation, shape (N, 2)."""
    obs = np.atleast_2d(obs)
    rho_l = normalized_radius(obs[:, 0], obs[:, 1], k)
    rho_r = normalized_radius(obs[:, 2], obs[:, 3], k)
    scale = 1.0 + noise.periphery_ramp * np.stack([rho_l, rho_r], axis=1)
    return noise.keypoint_sigma_px * scale


def keypoint_sigma_for_rmse(
    target_rmse_px: float,
    periphery_ramp: float,
    k: CameraIntrinsics,
    scene: RigidTransform,
    box_lo=(0.0, -20.0, 0.0),
    box_hi=(10.0, 0.0, 10.0),
    grid: int = 21,
) -> float:
    """Centre deviation giving a Euclidean 2D detection RMSE of ``target_rmse_px``.

    The mean is taken over both images and over the centres of a regular
    ``grid**3`` cell partition of the robot-frame box, i.e. for setpoints
    drawn uniformly from the box.
    """
    frac = (np.arange(grid) + 0.5) / grid
    axes = [lo + (hi - lo) * frac for lo, hi in zip(box_lo, box_hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    obs = project_array(scene.apply(pts), k)
    unit = NoiseConfig(keypoint_sigma_px=1.0, periphery_ramp=periphery_ramp)
    scale = keypoint_sigma_at(obs, k, unit)
    # two axes per image point
    return float(target_rmse_px / math.sqrt(2.0 * np.mean(scale**2)))


def detect_drill_tip(
    true_tip, k: CameraIntrinsics, noise: NoiseConfig, rng: np.random.Generator
) -> StereoObservation:
    """Noisy stereo detection of a drill tip at ``true_tip`` ({Mi}, mm).

    Raises:
        OutOfView: when the exact projection leaves either image.
    """
    exact = project_array(np.asarray(true_tip, dtype=float)[None, :], k)[0]
    if not (in_image(exact[0], exact[1]) and in_image(exact[2], exact[3])):
        raise OutOfView(f"drill tip {np.round(true_tip, 3).tolist()} projects outside the image")
    sigma = keypoint_sigma_at(exact, k, noise)[0]
    draw = rng.standard_normal(4)
    noisy = exact + draw * np.repeat(sigma, 2)
    return StereoObservation.from_array(noisy)


def landmark_pixels(skull, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Exact left-image pixels of bregma and lambda."""
    b = xy_to_left_pixel(np.asarray(skull.bregma)[:2], k)
    l = xy_to_left_pixel(np.asarray(skull.lambda_)[:2], k)
    return b, l


def detect_landmarks(
    skull, k: CameraIntrinsics, noise: NoiseConfig, rng: np.random.Generator
) -> tuple[PixelPoint, PixelPoint]:
    """Noisy left-image pixels of (bregma, lambda)."""
    b, l = landmark_pixels(skull, k)
    for name, px in (("bregma", b), ("lambda", l)):
        if not in_image(px[0], px[1], IMAGE_WIDTH, IMAGE_HEIGHT):
            raise OutOfView(f"{name} at pixel {np.round(px, 2).tolist()} is outside the image")
    z1 = rng.standard_normal(2)
    z2 = rng.standard_normal(2)
    rho = noise.landmark_correlation
    s_b, s_l = noise.landmark_sigma_px
    e_b = s_b * z1
    e_l = s_l * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    return PixelPoint(*(b + e_b)), PixelPoint(*(l + e_l))


def recognize_completion(
    true_c, noise: NoiseConfig, tick: int, rng: np.random.Generator
) -> np.ndarray:
    """Noisy completion vector: relative Gaussian error, clamped, with scripted faults applied last."""
    true_c = np.clip(np.asarray(true_c, dtype=float), 0.0, 1.0)
    out = true_c.copy()
    if noise.completion_mape > 0:
        eps = rng.normal(0.0, noise.completion_sigma, size=true_c.shape)
        noisy = true_c < noise.completion_cue_level
        out[noisy] = true_c[noisy] * (1.0 + eps[noisy])
    out = np.clip(out, 0.0, 1.0)
    for f in noise.fault_script:
        if f.active(tick) and 0 <= f.sample < out.size:
            out[f.sample] = f.value
    return out


def completion_mape(reported, true_c) -> float:
    """Mean absolute percentage error (as a fraction) over entries with ``true_c > MAPE_FLOOR``."""
    reported = np.asarray(reported, dtype=float)
    true_c = np.asarray(true_c, dtype=float)
    mask = true_c > MAPE_FLOOR
    if not mask.any():
        return 0.0
    return float(np.mean(np.abs(reported[mask] - true_c[mask]) / true_c[mask]))


class PerceptionOracle:
    """Simulated perception for one scene: detectors plus per-stream seeded generators.

    Args:
        k: camera intrinsics.
        noise: noise configuration.
        scene: ground-truth transform from the robot frame {R} to {Mi}.
        seed: root seed; each stream derives its own generator from it.
    """

    def __init__(self, k: CameraIntrinsics, noise: NoiseConfig, scene: RigidTransform, seed: int = 0):
        self.k = k
        self.noise = noise
        self.scene = scene
        self.seed = int(seed)
        self._keypoint_rng = self._stream(_STREAM_KEYPOINT)
        self._landmark_rng = self._stream(_STREAM_LANDMARK)

    def _stream(self, stream: int, *keys: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, stream, *keys]))

    def observe_tip_at(self, setpoint_r) -> StereoObservation:
        """Detect the drill tip after the robot moved it to ``setpoint_r`` ({R}, mm)."""
        true_tip = self.scene.apply(np.asarray(setpoint_r, dtype=float))
        return detect_drill_tip(true_tip, self.k, self.noise, self._keypoint_rng)

    def observe_landmarks(self, skull) -> tuple[PixelPoint, PixelPoint]:
        return detect_landmarks(skull, self.k, self.noise, self._landmark_rng)

    def completion(self, true_c, tick: int, faults: tuple[Fault, ...] = ()) -> np.ndarray:
        """Completion reading for ``tick``; depends only on (seed, tick) and the truth."""
        noise = self.noise
        if faults:
            noise = _with_faults(noise, faults)
        return recognize_completion(true_c, noise, tick, self._stream(_STREAM_COMPLETION, tick))

    def random_faults(self, n_samples: int) -> tuple[Fault, ...]:
        """Draw this episode's random saturation faults (at most one) from ``fault_rate``."""
        if self.noise.fault_rate <= 0:
            return ()
        rng = self._stream(_STREAM_FAULT)
        if rng.random() >= self.noise.fault_rate:
            return ()
        return (Fault(sample=int(rng.integers(n_samples)), value=float(rng.uniform(0.6, 0.95))),)


def _with_faults(noise: NoiseConfig, faults: tuple[Fault, ...]) -> NoiseConfig:
    return replace(noise, fault_script=noise.fault_script + tuple(faults))
