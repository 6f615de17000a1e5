"""Orthographic disparity-depth stereo model of the microscope camera pair.

A point in the microscope frame {Mi} is recovered from its left and right
pixel coordinates with an affine map::

    x = p_rho_x * (x_l - c_x)
    y = p_rho_y * (y_l - c_y)
    z = (x_l - x_r) / h_rho + d_e

``p_rho_x`` and ``p_rho_y`` multiply pixel offsets, so they act as mm per
pixel. ``h_rho`` is the disparity (pixels) produced by one mm of depth.
The right-image row is not used by the map; observations whose rows
disagree by more than a tolerance are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, RowMismatch

IMAGE_WIDTH = 960
IMAGE_HEIGHT = 540
ROW_TOLERANCE_PX = 2.0


@dataclass(frozen=True)
class CameraIntrinsics:
    c_x: float = 480.0
    c_y: float = 270.0
    p_rho_x: float = 0.03947
    p_rho_y: float = 0.03894
    d_e: float = 0.0
    h_rho: float = 6.4

    def __post_init__(self):
        for name in ("p_rho_x", "p_rho_y", "h_rho"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"intrinsics.{name} must be positive, got {value!r}")

    @property
    def coefficient_matrix(self) -> np.ndarray:
        """3x4 matrix acting on ``[x_l, y_l, x_r, y_r]``."""
        return np.array(
            [
                [self.p_rho_x, 0.0, 0.0, 0.0],
                [0.0, self.p_rho_y, 0.0, 0.0],
                [1.0 / self.h_rho, 0.0, -1.0 / self.h_rho, 0.0],
            ]
        )

    @property
    def bias(self) -> np.ndarray:
        return np.array([-self.c_x * self.p_rho_x, -self.c_y * self.p_rho_y, self.d_e])


class PixelPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class StereoObservation:
    left: PixelPoint
    right: PixelPoint

    @classmethod
    def from_array(cls, row) -> "StereoObservation":
        x_l, y_l, x_r, y_r = (float(v) for v in row)
        return cls(PixelPoint(x_l, y_l), PixelPoint(x_r, y_r))

    def as_array(self) -> np.ndarray:
        return np.array([self.left.x, self.left.y, self.right.x, self.right.y], dtype=float)

    @property
    def row_delta(self) -> float:
        return abs(self.left.y - self.right.y)


def in_image(x, y, width: int = IMAGE_WIDTH, height: int = IMAGE_HEIGHT):
    """Elementwise test for pixel coordinates inside ``[0, width) x [0, height)``."""
    x = np.asarray(x)
    y = np.asarray(y)
    return (x >= 0) & (x < width) & (y >= 0) & (y < height)


def reconstruct(
    obs: StereoObservation, k: CameraIntrinsics, row_tolerance: float = ROW_TOLERANCE_PX
) -> np.ndarray:
    """Reconstruct the {Mi} point (mm) seen at ``obs``.

    Raises:
        RowMismatch: if the left and right rows differ by more than
            ``row_tolerance`` pixels.
    """
    if obs.row_delta > row_tolerance:
        raise RowMismatch(obs.row_delta, row_tolerance)
    return reconstruct_array(obs.as_array()[None, :], k)[0]


def reconstruct_array(obs: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorised reconstruction of ``(N, 4)`` observations to ``(N, 3)`` points.

    No row check is done here; callers that need one use :func:`reconstruct`
    or :func:`check_rows`.
    """
    obs = np.asarray(obs, dtype=float)
    x_l, y_l, x_r = obs[..., 0], obs[..., 1], obs[..., 2]
    return np.stack(
        [
            k.p_rho_x * (x_l - k.c_x),
            k.p_rho_y * (y_l - k.c_y),
            (x_l - x_r) / k.h_rho + k.d_e,
        ],
        axis=-1,
    )


def check_rows(obs: np.ndarray, row_tolerance: float = ROW_TOLERANCE_PX) -> None:
    obs = np.asarray(obs, dtype=float)
    delta = np.abs(obs[..., 1] - obs[..., 3])
    if np.any(delta > row_tolerance):
        raise RowMismatch(float(delta.max()), row_tolerance)


def project(
    p, k: CameraIntrinsics, width: int = IMAGE_WIDTH, height: int = IMAGE_HEIGHT
) -> tuple[StereoObservation, bool]:
    """Project a {Mi} point to its stereo observation.

    Returns the observation and a flag that is True when both the left and
    right pixels fall inside the image.
    """
    row = project_array(np.asarray(p, dtype=float)[None, :], k)[0]
    obs = StereoObservation.from_array(row)
    visible = bool(in_image(row[0], row[1], width, height) and in_image(row[2], row[3], width, height))
    return obs, visible


def project_array(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Exact inverse of :func:`reconstruct_array` with ``y_r = y_l``."""
    points = np.asarray(points, dtype=float)
    x_l = points[..., 0] / k.p_rho_x + k.c_x
    y_l = points[..., 1] / k.p_rho_y + k.c_y
    x_r = x_l - k.h_rho * (points[..., 2] - k.d_e)
    return np.stack([x_l, y_l, x_r, y_l], axis=-1)


def left_pixel_to_xy(px, k: CameraIntrinsics) -> np.ndarray:
    """Metric {Mi} x, y of a left-image pixel (depth is not observable from one view)."""
    px = np.asarray(px, dtype=float)
    return np.stack([k.p_rho_x * (px[..., 0] - k.c_x), k.p_rho_y * (px[..., 1] - k.c_y)], axis=-1)


def xy_to_left_pixel(xy, k: CameraIntrinsics) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return np.stack([xy[..., 0] / k.p_rho_x + k.c_x, xy[..., 1] / k.p_rho_y + k.c_y], axis=-1)


def normalized_radius(
    x, y, k: CameraIntrinsics, width: int = IMAGE_WIDTH, height: int = IMAGE_HEIGHT
):
    """Elliptical image radius about the principal point: 0 at the centre, 1 at edge midpoints."""
    return np.hypot((np.asarray(x) - k.c_x) / (width / 2), (np.asarray(y) - k.c_y) / (height / 2))
