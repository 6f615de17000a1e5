"""Experiment configuration: one JSON document covering every tunable.

Each section maps onto a frozen dataclass. Loading rejects unknown keys and
runs every section's own validation before anything executes. The default
document reproduces the reference setup (five calibration setpoints,
``n = 32``, ``r = 2 mm``, ``r_d = 0.5 mm``, ``delta_d = 0.5 mm``, ``l = 1/3``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .calibration import CENTRAL_RADIUS, DEFAULT_SETPOINTS
from .errors import BoneMillError, ConfigError
from .milling import EpisodeSettings
from .perception import Fault, NoiseConfig, keypoint_sigma_for_rmse
from .skull import SkullParams
from .stereo import CameraIntrinsics
from .trajectory import DamperConfig
from .transforms import RigidTransform


@dataclass(frozen=True)
class SceneConfig:
    """Ground-truth {R} -> {Mi} transform.

    The rotation is given as Euler angles; the translation is fixed by
    requiring ``anchor_robot`` to land on ``anchor_microscope``.
    """

    rotation_deg: tuple[float, float, float] = (1.0, -1.5, 2.0)
    seq: str = "xyz"
    anchor_robot: tuple[float, float, float] = (5.0, -10.0, 5.0)
    anchor_microscope: tuple[float, float, float] = (0.0, 0.0, 5.0)

    def __post_init__(self):
        for name in ("rotation_deg", "anchor_robot", "anchor_microscope"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
            if len(getattr(self, name)) != 3:
                raise ConfigError(f"scene.{name} must have three entries")
        try:
            self.transform()
        except ValueError as exc:
            raise ConfigError(f"scene: {exc}") from exc

    def transform(self) -> RigidTransform:
        rot = RigidTransform.from_euler(self.rotation_deg, np.zeros(3), self.seq)
        t = np.asarray(self.anchor_microscope, dtype=float) - rot.r @ np.asarray(self.anchor_robot, dtype=float)
        return RigidTransform(rot.r, t)


@dataclass(frozen=True)
class SurfaceConfig:
    """Surface the planner queries: the analytic model or a sampled point cloud."""

    kind: str = "model"
    density: float = 100.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("model", "point_cloud"):
            raise ConfigError("surface.kind must be 'model' or 'point_cloud'")
        if not self.density > 0 or self.noise_sigma < 0:
            raise ConfigError("surface.density must be > 0 and surface.noise_sigma >= 0")


@dataclass(frozen=True)
class TrajectoryConfig:
    n: int = 32
    l: float = 1.0 / 3.0
    radius: float = 2.0
    drill_radius: float = 0.5
    safety_gap: float = 0.5
    spline_subdivisions: int = 4


@dataclass(frozen=True)
class MillingConfig:
    membrane_margin: float = 0.05
    grid_resolution: float = 0.05
    timeout_s: float = 1800.0
    release_completion: float = 0.5


@dataclass(frozen=True)
class NoiseSpec:
    """Detector noise as configured; :meth:`resolve` turns it into a :class:`NoiseConfig`.

    ``keypoint_rmse_px`` is the Euclidean 2D keypoint RMSE over the
    calibration box; the centre deviation is derived from it unless
    ``keypoint_sigma_px`` is set explicitly. Landmark values are Euclidean
    RMSEs for (bregma, lambda).
    """

    keypoint_rmse_px: float = 3.18
    keypoint_sigma_px: float | None = None
    periphery_ramp: float = 4.0
    landmark_rmse_px: tuple[float, float] = (1.19, 1.73)
    landmark_correlation: float = 0.0
    completion_mape_pct: float = 24.32
    completion_cue_level: float = 0.999
    fault_rate: float = 0.0
    fault_script: tuple[Fault, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "landmark_rmse_px", tuple(float(v) for v in self.landmark_rmse_px))
        object.__setattr__(
            self, "fault_script", tuple(f if isinstance(f, Fault) else Fault(**f) for f in self.fault_script)
        )
        if self.keypoint_rmse_px < 0 or (self.keypoint_sigma_px is not None and self.keypoint_sigma_px < 0):
            raise ConfigError("noise keypoint values must be >= 0")
        if self.completion_mape_pct < 0:
            raise ConfigError("noise.completion_mape_pct must be >= 0")
        self.resolve(CameraIntrinsics(), RigidTransform.identity(), derive=False)

    def resolve(self, k: CameraIntrinsics, scene: RigidTransform, derive: bool = True) -> NoiseConfig:
        if self.keypoint_sigma_px is not None:
            sigma = self.keypoint_sigma_px
        elif derive and self.keypoint_rmse_px > 0:
            sigma = keypoint_sigma_for_rmse(self.keypoint_rmse_px, self.periphery_ramp, k, scene)
        else:
            sigma = 0.0
        return NoiseConfig(
            keypoint_sigma_px=sigma,
            periphery_ramp=self.periphery_ramp,
            landmark_sigma_px=tuple(v / math.sqrt(2.0) for v in self.landmark_rmse_px),
            landmark_correlation=self.landmark_correlation,
            completion_mape=self.completion_mape_pct / 100.0,
            completion_cue_level=self.completion_cue_level,
            fault_script=self.fault_script,
            fault_rate=self.fault_rate,
        )


@dataclass(frozen=True)
class Exp1Config:
    evaluations: int = 100
    validation_points: int = 20
    central_radius: float = CENTRAL_RADIUS


@dataclass(frozen=True)
class Exp2Config:
    trials: int = 10000


@dataclass(frozen=True)
class Exp3Config:
    """Noise grid for batch episodes.

    With ``completion_only`` the keypoint and landmark noise is switched off
    so the grid isolates the completion recognizer.
    """

    mape_levels_pct: tuple[float, ...] = (0.0, 10.0, 24.32, 40.0)
    fault_rate: float = 0.15
    completion_only: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mape_levels_pct", tuple(float(v) for v in self.mape_levels_pct))
        if any(v < 0 for v in self.mape_levels_pct):
            raise ConfigError("exp3.mape_levels_pct must be >= 0")
        if not 0.0 <= self.fault_rate <= 1.0:
            raise ConfigError("exp3.fault_rate must lie in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    episodes: int = 50
    output_dir: str = "out"
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    scene: SceneConfig = field(default_factory=SceneConfig)
    skull: SkullParams = field(default_factory=SkullParams)
    surface: SurfaceConfig = field(default_factory=SurfaceConfig)
    setpoints: tuple[tuple[float, float, float], ...] = tuple(map(tuple, DEFAULT_SETPOINTS.tolist()))
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    damper: DamperConfig = field(default_factory=DamperConfig)
    milling: MillingConfig = field(default_factory=MillingConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    exp1: Exp1Config = field(default_factory=Exp1Config)
    exp2: Exp2Config = field(default_factory=Exp2Config)
    exp3: Exp3Config = field(default_factory=Exp3Config)

    def __post_init__(self):
        object.__setattr__(self, "setpoints", tuple(tuple(float(v) for v in p) for p in self.setpoints))
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.exp1.evaluations < 0 or self.exp1.validation_points < 0 or self.exp2.trials < 0:
            raise ConfigError("experiment counts must be >= 0")
        # cross-section checks live in the episode settings
        self.episode_settings()

    def episode_settings(self) -> EpisodeSettings:
        t, m = self.trajectory, self.milling
        return EpisodeSettings(
            intrinsics=self.intrinsics,
            setpoints=self.setpoints,
            n=t.n,
            l=t.l,
            radius=t.radius,
            drill_radius=t.drill_radius,
            safety_gap=t.safety_gap,
            damper=self.damper,
            membrane_margin=m.membrane_margin,
            grid_resolution=m.grid_resolution,
            timeout_s=m.timeout_s,
            spline_subdivisions=t.spline_subdivisions,
            release_completion=m.release_completion,
        )

    def scene_transform(self) -> RigidTransform:
        return self.scene.transform()

    def noise_config(self) -> NoiseConfig:
        return self.noise.resolve(self.intrinsics, self.scene_transform())

    def to_dict(self) -> dict:
        return _to_plain(self)

    def config_hash(self) -> str:
        """Digest of everything except the seed and output location."""
        body = {k: v for k, v in self.to_dict().items() if k not in ("seed", "output_dir")}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key '{_join(where, unknown[0])}'")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        key = _join(where, name)
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, key)
        elif name == "fault_script":
            if not isinstance(value, list):
                raise ConfigError(f"{key}: expected a list")
            kwargs[name] = tuple(_build(Fault, f, f"{key}[{i}]") for i, f in enumerate(value))
        else:
            kwargs[name] = _coerce(value, hint, key)
    try:
        return cls(**kwargs)
    except (BoneMillError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _coerce(value, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list")
        inner = args[0]
        return tuple(_coerce(v, inner, f"{key}[{i}]") for i, v in enumerate(value))
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None:
            return None
        return _coerce(value, next(a for a in args if a is not type(None)), key)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string")
        return value
    return value


def _join(where: str, name: str) -> str:
    return f"{where}.{name}" if where else name


def from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a config; missing keys take their defaults."""
    return _build(ExperimentConfig, data, "")


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def apply_overrides(data: dict, assignments) -> dict:
    """Apply ``section.key=value`` strings (values parsed as JSON, else taken as text)."""
    data = json.loads(json.dumps(data))
    for item in assignments:
        path, sep, raw = item.partition("=")
        if not sep or not path:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{path}': '{part}' is not a section")
        node[parts[-1]] = value
    return data
