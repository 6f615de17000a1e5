"""Landmark-based rigid calibration between the microscope and robot frames.

The transform {Mi} -> {R} is the least-squares rigid fit between drill-tip
positions reconstructed by the stereo model and the robot setpoints that
put the tip there. The fit is the closed-form SVD solution (Kabsch/Umeyama
with unit scale) with the usual determinant correction against reflections.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import records
from .errors import DegenerateLandmarks, OracleDetectionFailure, OutOfView
from .perception import PerceptionOracle
from .stereo import CameraIntrinsics, check_rows, normalized_radius, project_array, reconstruct_array
from .transforms import RigidTransform

logger = logging.getLogger(__name__)

DEFAULT_SETPOINTS = np.array(
    [
        [0.0, -20.0, 0.0],
        [10.0, -20.0, 0.0],
        [5.0, -10.0, 0.0],
        [10.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
    ]
)
VALIDITY_BOX_LO = np.array([0.0, -20.0, 0.0])
VALIDITY_BOX_HI = np.array([10.0, 0.0, 10.0])
DETECTION_THRESHOLD_PX = 10.0
TRANSFORM_THRESHOLD_MM = 1.0
DEGENERACY_TOL = 1e-6
# Noisy detections disagree in row by several sigma at the periphery; only
# gross mismatches (wrong correspondence) are rejected in the pipeline.
DETECTION_ROW_TOLERANCE_PX = 50.0
CENTRAL_RADIUS = 0.6


def solve_landmark_transform(source, target) -> RigidTransform:
    """Rigid transform minimising ``sum ||R s_i + t - t_i||^2``.

    Args:
        source: (N, 3) points in the source frame.
        target: (N, 3) corresponding points in the target frame.

    Raises:
        DegenerateLandmarks: fewer than three pairs, mismatched lengths, or
            collinear source points.
    """
    src = np.asarray(source, dtype=float)
    dst = np.asarray(target, dtype=float)
    if src.ndim != 2 or src.shape[1] != 3 or src.shape != dst.shape:
        raise DegenerateLandmarks(f"landmark sets must be matching (N, 3) arrays, got {src.shape} and {dst.shape}")
    if len(src) < 3:
        raise DegenerateLandmarks(f"need at least 3 landmark pairs, got {len(src)}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    sc = src - mu_s
    dc = dst - mu_d
    # rank >= 2 is enough; coplanar sets are fine
    spread = np.linalg.svd(sc, compute_uv=False)
    if spread[1] <= DEGENERACY_TOL:
        raise DegenerateLandmarks(f"source landmarks are collinear (second singular value {spread[1]:.3g})")
    u, _, vt = np.linalg.svd(dc.T @ sc)
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(u @ vt)) or 1.0
    r = (u * d) @ vt
    return RigidTransform(r, mu_d - r @ mu_s)


def apply(tf: RigidTransform, p) -> np.ndarray:
    return tf.apply(p)


def rms(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(values**2))) if values.size else 0.0


@dataclass
class CalibrationReport:
    transform: RigidTransform
    per_point_residual: np.ndarray
    rmse_mm: float
    detection_rmse_px: float
    reconstructed: np.ndarray = field(repr=False)


def auto_calibrate(
    setpoints,
    oracle: PerceptionOracle,
    k: CameraIntrinsics,
    row_tolerance: float = DETECTION_ROW_TOLERANCE_PX,
) -> CalibrationReport:
    """Drive the tip to each setpoint, reconstruct it, and fit {Mi} -> {R}.

    Raises:
        OracleDetectionFailure: a setpoint puts the tip out of view.
        DegenerateLandmarks: the setpoints cannot fix a rigid transform.
    """
    setpoints = np.asarray(setpoints, dtype=float)
    obs = []
    for i, sp in enumerate(setpoints):
        try:
            obs.append(oracle.observe_tip_at(sp).as_array())
        except OutOfView as exc:
            raise OracleDetectionFailure(f"setpoint {i} {sp.tolist()}: {exc}") from exc
    obs = np.array(obs).reshape(-1, 4)
    check_rows(obs, row_tolerance)
    recon = reconstruct_array(obs, k)
    tf = solve_landmark_transform(recon, setpoints)
    residual = np.linalg.norm(tf.apply(recon) - setpoints, axis=1)
    exact = project_array(oracle.scene.apply(setpoints), k)
    return CalibrationReport(
        transform=tf,
        per_point_residual=residual,
        rmse_mm=rms(residual),
        detection_rmse_px=pixel_rmse(obs, exact),
        reconstructed=recon,
    )


def pixel_rmse(obs, exact) -> float:
    """Euclidean 2D RMSE over every left and right image point."""
    return rms(pixel_errors(obs, exact))


def pixel_errors(obs, exact) -> np.ndarray:
    """(N, 2) Euclidean pixel errors of the left and right detections."""
    diff = np.asarray(obs, dtype=float) - np.asarray(exact, dtype=float)
    return np.stack([np.hypot(diff[:, 0], diff[:, 1]), np.hypot(diff[:, 2], diff[:, 3])], axis=1)


@dataclass
class EvaluationReport:
    """Joint detection/calibration evaluation on random validation setpoints.

    Attributes:
        points: (m, 3) validation setpoints in {R}.
        transformed: (m, 3) reconstructed tips mapped back to {R}.
        residual_mm: per-point 3D error.
        pixel_error_px: (m, 2) Euclidean left/right detection errors.
        image_radius: normalized left-image radius of each point.
        central_radius: radius separating central from peripheral points.
    """

    seed: int
    points: np.ndarray
    transformed: np.ndarray
    residual_mm: np.ndarray
    pixel_error_px: np.ndarray
    image_radius: np.ndarray
    calibration: CalibrationReport
    central_radius: float = CENTRAL_RADIUS
    detection_threshold_px: float = DETECTION_THRESHOLD_PX
    transform_threshold_mm: float = TRANSFORM_THRESHOLD_MM

    @property
    def rmse_2d_px(self) -> float:
        return rms(self.pixel_error_px)

    @property
    def rmse_3d_mm(self) -> float:
        return rms(self.residual_mm)

    @property
    def central(self) -> np.ndarray:
        return self.image_radius <= self.central_radius

    @property
    def central_rmse_mm(self) -> float:
        return rms(self.residual_mm[self.central])

    @property
    def point_pass(self) -> np.ndarray:
        return (self.residual_mm <= self.transform_threshold_mm) & (
            self.pixel_error_px.max(axis=1) <= self.detection_threshold_px
        )

    @property
    def passed(self) -> bool:
        return self.rmse_2d_px <= self.detection_threshold_px and self.rmse_3d_mm <= self.transform_threshold_mm

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "m": int(len(self.points)),
            "rmse_2d_px": self.rmse_2d_px,
            "rmse_3d_mm": self.rmse_3d_mm,
            "central_rmse_mm": self.central_rmse_mm,
            "n_central": int(self.central.sum()),
            "calibration_rmse_mm": self.calibration.rmse_mm,
            "calibration_detection_rmse_px": self.calibration.detection_rmse_px,
            "point_pass_fraction": float(self.point_pass.mean()) if len(self.points) else 1.0,
            "detection_threshold_px": self.detection_threshold_px,
            "transform_threshold_mm": self.transform_threshold_mm,
            "passed": self.passed,
        }

    def write_csv(self, path: Path, meta: dict | None = None) -> None:
        header = ["index", "gt_x", "gt_y", "gt_z", "rec_x", "rec_y", "rec_z", "residual_mm", "image_radius",
                  "pixel_error_px", "central", "pass"]
        rows = (
            [i, *self.points[i], *self.transformed[i], self.residual_mm[i], self.image_radius[i],
             self.pixel_error_px[i].max(), bool(self.central[i]), bool(self.point_pass[i])]
            for i in range(len(self.points))
        )
        records.write_csv(path, header, rows, meta)

    def write_json(self, path: Path, extra: dict | None = None) -> None:
        records.write_json(path, {**self.summary(), **(extra or {})})


def joint_evaluation(
    m_points: int,
    seed: int,
    k: CameraIntrinsics,
    oracle: PerceptionOracle,
    setpoints=DEFAULT_SETPOINTS,
    box_lo=VALIDITY_BOX_LO,
    box_hi=VALIDITY_BOX_HI,
    central_radius: float = CENTRAL_RADIUS,
    row_tolerance: float = DETECTION_ROW_TOLERANCE_PX,
) -> EvaluationReport:
    """Calibrate, then score detection and transform error on ``m_points`` random setpoints.

    The validation setpoints are drawn uniformly in the box from a generator
    seeded by ``seed``; detections come from ``oracle``.
    """
    cal = auto_calibrate(setpoints, oracle, k, row_tolerance)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE1]))
    pts = rng.uniform(box_lo, box_hi, size=(m_points, 3))
    obs = np.empty((m_points, 4))
    for i, p in enumerate(pts):
        try:
            obs[i] = oracle.observe_tip_at(p).as_array()
        except OutOfView as exc:
            raise OracleDetectionFailure(f"validation point {i}: {exc}") from exc
    exact = project_array(oracle.scene.apply(pts), k)
    transformed = cal.transform.apply(reconstruct_array(obs, k)) if m_points else np.empty((0, 3))
    return EvaluationReport(
        seed=int(seed),
        points=pts,
        transformed=transformed,
        residual_mm=np.linalg.norm(transformed - pts, axis=1),
        pixel_error_px=pixel_errors(obs, exact) if m_points else np.empty((0, 2)),
        image_radius=normalized_radius(exact[:, 0], exact[:, 1], k),
        calibration=cal,
        central_radius=central_radius,
    )
