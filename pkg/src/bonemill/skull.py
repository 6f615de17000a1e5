"""Synthetic mouse-skull surrogates in the microscope frame.

The top surface is an analytic heightfield

    z_top(x, y) = base - kx (x - x0)^2 / 2 - ky (y - y0)^2 / 2 + sum_j a_j G_j(x, y)

(a paraboloid cap plus isotropic Gaussian bumps), so heights and normals are
exact. Bone thickness is squashed through ``tanh`` into the configured
bounds, which holds them everywhere by construction. Bregma and lambda sit
on the surface, separated along y.

Two surfaces answer the same ``query``/``query_many`` calls: the analytic
:class:`SkullModel` and a sampled :class:`PointCloud`, the latter standing
in for a dense stereo reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InfeasibleParams, OutOfExtent
from .stereo import CameraIntrinsics, PixelPoint, left_pixel_to_xy


@dataclass(frozen=True)
class SkullParams:
    extent: tuple[float, float, float, float] = (-8.0, 8.0, -8.0, 8.0)
    base_height: float = 5.0
    dome_curvature: tuple[float, float] = (1.0 / 12.0, 1.0 / 16.0)
    dome_offset: float = 1.0
    bump_count: tuple[int, int] = (3, 8)
    bump_amplitude: float = 0.12
    bump_width: tuple[float, float] = (0.8, 2.5)
    thickness_bounds: tuple[float, float] = (0.27, 0.51)
    thickness_variation: float = 0.8
    thickness_bump_count: int = 6
    landmark_spacing: float = 8.0
    landmark_jitter: float = 0.3

    def __post_init__(self):
        for name in ("extent", "dome_curvature", "bump_count", "bump_width", "thickness_bounds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise InfeasibleParams(f"empty skull extent {self.extent}")
        lo, hi = self.thickness_bounds
        if not (0 < lo <= hi):
            raise InfeasibleParams(f"thickness bounds must satisfy 0 < lo <= hi, got {self.thickness_bounds}")
        if not 0 <= self.thickness_variation <= 1:
            raise InfeasibleParams("thickness_variation must lie in [0, 1]")
        if self.bump_count[0] < 0 or self.bump_count[1] < self.bump_count[0]:
            raise InfeasibleParams(f"bad bump_count range {self.bump_count}")
        if self.bump_width[0] <= 0 or self.bump_width[1] < self.bump_width[0]:
            raise InfeasibleParams(f"bad bump_width range {self.bump_width}")
        if self.bump_amplitude < 0 or self.landmark_spacing <= 0 or self.landmark_jitter < 0:
            raise InfeasibleParams("bump_amplitude, landmark_jitter must be >= 0 and landmark_spacing > 0")
        if self.landmark_spacing + 2 * self.landmark_jitter >= (y1 - y0):
            raise InfeasibleParams("landmarks do not fit inside the extent")


@dataclass(frozen=True)
class SurfaceSample:
    point: np.ndarray
    normal: np.ndarray


def _gaussians(x, y, centers, widths, amps):
    """Sum of Gaussians and its gradient at broadcastable ``x, y``."""
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    dx = x - centers[:, 0]
    dy = y - centers[:, 1]
    g = amps * np.exp(-(dx**2 + dy**2) / (2.0 * widths**2))
    val = g.sum(axis=-1)
    gx = (-dx / widths**2 * g).sum(axis=-1)
    gy = (-dy / widths**2 * g).sum(axis=-1)
    return val, gx, gy


@dataclass(frozen=True, eq=False)
class SkullModel:
    """Analytic skull surface; all coordinates in {Mi} millimetres."""

    extent: tuple[float, float, float, float]
    base_height: float
    dome_curvature: tuple[float, float]
    dome_center: tuple[float, float]
    bump_centers: np.ndarray
    bump_widths: np.ndarray
    bump_amps: np.ndarray
    thickness_bounds: tuple[float, float]
    thickness_variation: float
    thick_centers: np.ndarray
    thick_widths: np.ndarray
    thick_amps: np.ndarray
    bregma: np.ndarray = field(default=None)
    lambda_: np.ndarray = field(default=None)

    def contains(self, x, y) -> np.ndarray:
        x0, x1, y0, y1 = self.extent
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def height(self, x, y) -> np.ndarray:
        return self._height_and_gradient(x, y)[0]

    def _height_and_gradient(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        kx, ky = self.dome_curvature
        cx, cy = self.dome_center
        val, gx, gy = _gaussians(x, y, self.bump_centers, self.bump_widths, self.bump_amps)
        z = self.base_height - 0.5 * kx * (x - cx) ** 2 - 0.5 * ky * (y - cy) ** 2 + val
        return z, gx - kx * (x - cx), gy - ky * (y - cy)

    def gradient(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        _, gx, gy = self._height_and_gradient(x, y)
        return gx, gy

    def thickness(self, x, y) -> np.ndarray:
        lo, hi = self.thickness_bounds
        g, _, _ = _gaussians(x, y, self.thick_centers, self.thick_widths, self.thick_amps)
        return lo + (hi - lo) * 0.5 * (1.0 + self.thickness_variation * np.tanh(g))

    def query_many(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """Surface points and upward unit normals at ``(N, 2)`` positions.

        Raises:
            OutOfExtent: any position lies outside the model extent.
        """
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if not np.all(self.contains(xy[:, 0], xy[:, 1])):
            bad = xy[~self.contains(xy[:, 0], xy[:, 1])][0]
            raise OutOfExtent(f"({bad[0]:.3f}, {bad[1]:.3f}) outside skull extent {self.extent}")
        z, gx, gy = self._height_and_gradient(xy[:, 0], xy[:, 1])
        normals = np.stack([-gx, -gy, np.ones_like(gx)], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return np.column_stack([xy, z]), normals

    def query(self, x: float, y: float) -> SurfaceSample:
        pts, nrm = self.query_many([[x, y]])
        return SurfaceSample(pts[0], nrm[0])


def generate(seed: int, params: SkullParams | None = None) -> SkullModel:
    """Build a skull surrogate; identical ``(seed, params)`` give identical models."""
    params = params or SkullParams()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5C]))
    x0, x1, y0, y1 = params.extent
    span = np.array([x1 - x0, y1 - y0])
    lo_xy = np.array([x0, y0])

    n_bumps = int(rng.integers(params.bump_count[0], params.bump_count[1] + 1))
    bump_centers = lo_xy + rng.uniform(size=(n_bumps, 2)) * span
    bump_widths = rng.uniform(*params.bump_width, size=n_bumps)
    bump_amps = rng.uniform(-1.0, 1.0, size=n_bumps) * params.bump_amplitude

    n_th = params.thickness_bump_count
    thick_centers = lo_xy + rng.uniform(size=(n_th, 2)) * span
    thick_widths = rng.uniform(1.0, 3.0, size=n_th)
    thick_amps = rng.uniform(-1.5, 1.5, size=n_th)

    dome_center = tuple(rng.uniform(-params.dome_offset, params.dome_offset, size=2))
    jitter = rng.uniform(-params.landmark_jitter, params.landmark_jitter, size=(2, 2))
    mid_y = 0.5 * (y0 + y1)
    bregma_xy = np.array([0.5 * (x0 + x1), mid_y - params.landmark_spacing / 2]) + jitter[0]
    lambda_xy = np.array([0.5 * (x0 + x1), mid_y + params.landmark_spacing / 2]) + jitter[1]

    model = SkullModel(
        extent=tuple(params.extent),
        base_height=params.base_height,
        dome_curvature=tuple(params.dome_curvature),
        dome_center=dome_center,
        bump_centers=bump_centers,
        bump_widths=bump_widths,
        bump_amps=bump_amps,
        thickness_bounds=tuple(params.thickness_bounds),
        thickness_variation=params.thickness_variation,
        thick_centers=thick_centers,
        thick_widths=thick_widths,
        thick_amps=thick_amps,
    )
    object.__setattr__(model, "bregma", np.append(bregma_xy, model.height(*bregma_xy)))
    object.__setattr__(model, "lambda_", np.append(lambda_xy, model.height(*lambda_xy)))
    return model


@dataclass(eq=False)
class PointCloud:
    """Unstructured surface samples with radius-averaged height lookup.

    Heights average every sample within ``radius`` of the query in xy (the
    nearest few when none is that close). Normals come from a least-squares
    plane over samples within ``normal_radius``.
    """

    points: np.ndarray
    radius: float = 0.1
    normal_radius: float = 0.3
    min_neighbors: int = 4

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self._tree = cKDTree(self.points[:, :2])
        self.extent = (
            float(self.points[:, 0].min()),
            float(self.points[:, 0].max()),
            float(self.points[:, 1].min()),
            float(self.points[:, 1].max()),
        )

    def __len__(self) -> int:
        return len(self.points)

    def contains(self, x, y) -> np.ndarray:
        x0, x1, y0, y1 = self.extent
        return (np.asarray(x) >= x0) & (np.asarray(x) <= x1) & (np.asarray(y) >= y0) & (np.asarray(y) <= y1)

    def _neighbors(self, xy, radius):
        idx = self._tree.query_ball_point(xy, radius)
        if len(idx) < self.min_neighbors:
            _, idx = self._tree.query(xy, k=self.min_neighbors)
            idx = np.atleast_1d(idx)
        return np.asarray(idx)

    def query_many(self, xy) -> tuple[np.ndarray, np.ndarray]:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        inside = self.contains(xy[:, 0], xy[:, 1])
        if not np.all(inside):
            bad = xy[~inside][0]
            raise OutOfExtent(f"({bad[0]:.3f}, {bad[1]:.3f}) outside point cloud extent {self.extent}")
        pts = np.empty((len(xy), 3))
        normals = np.empty((len(xy), 3))
        for i, q in enumerate(xy):
            near = self.points[self._neighbors(q, self.radius)]
            pts[i] = (q[0], q[1], near[:, 2].mean())
            nb = self.points[self._neighbors(q, self.normal_radius)]
            design = np.column_stack([np.ones(len(nb)), nb[:, 0] - q[0], nb[:, 1] - q[1]])
            coef, *_ = np.linalg.lstsq(design, nb[:, 2], rcond=None)
            n = np.array([-coef[1], -coef[2], 1.0])
            normals[i] = n / np.linalg.norm(n)
        return pts, normals

    def query(self, x: float, y: float) -> SurfaceSample:
        pts, nrm = self.query_many([[x, y]])
        return SurfaceSample(pts[0], nrm[0])

    def write_xyz(self, path) -> None:
        """One ``x y z`` triple per line."""
        np.savetxt(Path(path), self.points, fmt="%.6f")


def sample_point_cloud(
    model: SkullModel,
    density: float,
    noise_sigma: float,
    seed: int,
    region: tuple[float, float, float, float] | None = None,
) -> PointCloud:
    """Jittered-grid samples of the top surface with Gaussian height noise.

    Args:
        density: samples per mm^2.
        noise_sigma: std of the additive z noise (mm).
        region: optional (x0, x1, y0, y1) sub-rectangle of the extent.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    x0, x1, y0, y1 = region or model.extent
    h = 1.0 / np.sqrt(density)
    nx = max(int(round((x1 - x0) / h)), 1)
    ny = max(int(round((y1 - y0) / h)), 1)
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC1]))
    gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    x = x0 + (gx.ravel() + rng.uniform(size=gx.size)) * hx
    y = y0 + (gy.ravel() + rng.uniform(size=gy.size)) * hy
    z = model.height(x, y)
    if noise_sigma > 0:
        z = z + rng.normal(0.0, noise_sigma, size=z.shape)
    return PointCloud(np.column_stack([x, y, z]))


def center_pixel(bregma_px, lambda_px, l: float = 1.0 / 3.0) -> np.ndarray:
    """Point at fraction ``l`` of the way from bregma to lambda."""
    b = np.asarray(bregma_px, dtype=float)
    return b + l * (np.asarray(lambda_px, dtype=float) - b)


def locate_center(
    bregma_px: PixelPoint,
    lambda_px: PixelPoint,
    l: float,
    surface,
    k: CameraIntrinsics,
) -> np.ndarray:
    """Trajectory centre on ``surface`` ({Mi}, mm) from detected landmark pixels.

    Raises:
        ValueError: ``l`` outside [0, 1].
        OutOfExtent: the centre falls off the surface.
    """
    if not 0.0 <= l <= 1.0:
        raise ValueError(f"l must lie in [0, 1], got {l}")
    xy = left_pixel_to_xy(center_pixel(bregma_px, lambda_px, l), k)
    return surface.query(xy[0], xy[1]).point
