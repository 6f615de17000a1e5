"""Geometric drill/skull interaction and the closed-loop milling episode.

The drill is a ball of radius ``r_d`` whose centre follows the ring spline.
Every control tick the whole ring is swept: each cell of a regular xy grid
around the ring records the deepest vertical cut any ball position has made
into it, ``z_top - (c_z - sqrt(r_d^2 - d^2))``. Ground-truth completion at
sample ``i`` is the removed depth at the sample location divided by the local
bone thickness. The membrane fails as soon as any cell is cut deeper than its
thickness plus a margin.

All milling geometry lives in {Mi}. The planner works in the robot frame
{R}; its commands reach the skull through the ground-truth scene transform,
so calibration error shows up as a displaced drill.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.ndimage import maximum_filter

from . import _kernels, records
from .calibration import DEFAULT_SETPOINTS, auto_calibrate
from .errors import ConfigError, SteppedAfterFailure
from .perception import PerceptionOracle
from .skull import locate_center
from .stereo import CameraIntrinsics
from .trajectory import (
    DamperConfig,
    Trajectory,
    check_stop,
    damper_step,
    sample_fitted,
)

logger = logging.getLogger(__name__)

FAILURE_KINDS = ("none", "membrane_damage", "timeout", "calibration_contact", "incomplete")
CONTACT_TOL = 1e-12


@dataclass(frozen=True)
class EpisodeSettings:
    """Everything an episode needs besides the skull and the perception oracle.

    ``release_completion`` is the lowest true completion at which a sample
    still counts as cut through when the loop stops; a stop with any sample
    below it leaves the bone flap attached and is reported as ``incomplete``.
    """

    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    setpoints: tuple[tuple[float, float, float], ...] = tuple(map(tuple, DEFAULT_SETPOINTS.tolist()))
    n: int = 32
    l: float = 1.0 / 3.0
    radius: float = 2.0
    drill_radius: float = 0.5
    safety_gap: float = 0.5
    damper: DamperConfig = field(default_factory=DamperConfig)
    membrane_margin: float = 0.05
    grid_resolution: float = 0.05
    timeout_s: float = 1800.0
    spline_subdivisions: int = 4
    release_completion: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "setpoints", tuple(tuple(float(v) for v in p) for p in self.setpoints))
        if self.n < 4:
            raise ConfigError(f"trajectory.n must be >= 4, got {self.n}")
        if not 0.0 <= self.l <= 1.0:
            raise ConfigError(f"trajectory.l must lie in [0, 1], got {self.l}")
        for name in ("radius", "drill_radius", "grid_resolution", "timeout_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.safety_gap < 0 or self.membrane_margin < 0:
            raise ConfigError("safety_gap and membrane_margin must be >= 0")
        if self.spline_subdivisions < 1:
            raise ConfigError("spline_subdivisions must be >= 1")
        if not 0.0 <= self.release_completion <= 1.0:
            raise ConfigError("release_completion must lie in [0, 1]")
        if any(len(p) != 3 for p in self.setpoints):
            raise ConfigError("setpoints must be 3D points")

    @property
    def offset(self) -> float:
        return self.drill_radius + self.safety_gap


# ---------------------------------------------------------------------------
# Material removal
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RingGrid:
    """Static cell geometry around the ring: top height and thickness per cell."""

    origin: np.ndarray
    h: float
    shape: tuple[int, int]
    z_top: np.ndarray
    thickness: np.ndarray
    z_reach: np.ndarray
    stencil: np.ndarray
    drill_radius: float

    @classmethod
    def around(cls, path_xy: np.ndarray, skull, drill_radius: float, h: float, margin: float = 0.5) -> "RingGrid":
        """Grid covering ``path_xy`` padded by the drill radius plus ``margin``."""
        pad = drill_radius + margin
        lo = np.floor((path_xy.min(axis=0) - pad) / h) * h
        hi = np.ceil((path_xy.max(axis=0) + pad) / h) * h
        nx, ny = (np.rint((hi - lo) / h).astype(int) + 1).tolist()
        gx = lo[0] + h * np.arange(nx)
        gy = lo[1] + h * np.arange(ny)
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        z_top = skull.height(xx, yy)
        thickness = skull.thickness(xx, yy)
        reach = int(np.ceil(drill_radius / h)) + 1
        ox, oy = np.meshgrid(np.arange(-reach, reach + 1), np.arange(-reach, reach + 1), indexing="ij")
        keep = np.hypot(ox, oy) * h <= drill_radius + h
        stencil = np.ascontiguousarray(np.column_stack([ox[keep], oy[keep]]))
        foot = np.hypot(ox, oy) <= reach
        # highest surface any ball centred near a cell could touch
        z_reach = maximum_filter(z_top, footprint=foot, mode="nearest")
        return cls(lo, float(h), (nx, ny), z_top, thickness, z_reach, stencil, float(drill_radius))

    def cell_xy(self, ix, iy) -> tuple[np.ndarray, np.ndarray]:
        return self.origin[0] + self.h * ix, self.origin[1] + self.h * iy

    def cut(self, path: np.ndarray, out: np.ndarray) -> None:
        """Raise ``out`` (removed depth per cell) to the cuts of balls centred on ``path``."""
        nx, ny = self.shape
        _kernels.cut_grid(
            np.ascontiguousarray(path, dtype=float), float(self.origin[0]), float(self.origin[1]), self.h,
            nx, ny, self.z_top, self.z_reach, self.stencil, self.drill_radius, out,
        )


def point_cuts(qxy: np.ndarray, qz: np.ndarray, path: np.ndarray, r: float, floor=None) -> np.ndarray:
    """Deepest vertical cut at each query column from balls centred on ``path`` (0 when untouched).

    ``floor`` seeds the result, so previous cuts carry over.
    """
    out = np.zeros(len(qxy)) if floor is None else np.array(floor, dtype=float)
    _kernels.cut_points(
        np.ascontiguousarray(qxy, dtype=float), np.ascontiguousarray(qz, dtype=float),
        np.ascontiguousarray(path, dtype=float), float(r), out,
    )
    return out


@dataclass(frozen=True, eq=False)
class MillState:
    """Removed depth on the ring grid and at the sample columns.

    Attributes:
        removed_depth: grid field (mm removed per cell).
        sample_removed: removed depth at each sample column.
        drill_center: (n, 3) ball centres at the samples after the last step.
    """

    grid: RingGrid
    sample_xy: np.ndarray
    sample_z_top: np.ndarray
    sample_thickness: np.ndarray
    removed_depth: np.ndarray
    sample_removed: np.ndarray
    drill_center: np.ndarray
    membrane_margin: float = 0.05
    membrane_intact: bool = True
    sim_time: float = 0.0
    tick_count: int = 0
    last_path: np.ndarray | None = None

    @classmethod
    def fresh(cls, grid: RingGrid, sample_xy, skull, membrane_margin: float = 0.05) -> "MillState":
        sample_xy = np.asarray(sample_xy, dtype=float)
        n = len(sample_xy)
        return cls(
            grid=grid,
            sample_xy=sample_xy,
            sample_z_top=skull.height(sample_xy[:, 0], sample_xy[:, 1]),
            sample_thickness=skull.thickness(sample_xy[:, 0], sample_xy[:, 1]),
            removed_depth=np.zeros(grid.shape),
            sample_removed=np.zeros(n),
            drill_center=np.full((n, 3), np.nan),
            membrane_margin=membrane_margin,
        )

    def overshoot(self) -> np.ndarray:
        """Per-sample depth cut past the bone."""
        return np.maximum(self.sample_removed - self.sample_thickness, 0.0)


def step(state: MillState, path: np.ndarray, dt: float, samples_every: int = 1) -> MillState:
    """Sweep the drill along ``path`` ((K, 3) ball centres in {Mi}) for one tick.

    ``samples_every`` is the stride between trajectory samples in ``path``.

    Raises:
        SteppedAfterFailure: the membrane is already damaged.
    """
    if not state.membrane_intact:
        raise SteppedAfterFailure("cannot mill after membrane damage")
    path = np.asarray(path, dtype=float)
    removed = state.removed_depth.copy()
    if state.last_path is not None and state.last_path.shape == path.shape:
        moved = np.any(path != state.last_path, axis=1)
    else:
        moved = np.ones(len(path), dtype=bool)
    state.grid.cut(path[moved], removed)
    sample_removed = point_cuts(
        state.sample_xy, state.sample_z_top, path, state.grid.drill_radius, floor=state.sample_removed
    )
    intact = bool(
        np.all(removed <= state.grid.thickness + state.membrane_margin) and np.all(sample_removed <= state.sample_thickness + state.membrane_margin)
    )
    return replace(
        state,
        removed_depth=removed,
        sample_removed=sample_removed,
        drill_center=path[::samples_every].copy(),
        membrane_intact=intact,
        sim_time=state.sim_time + dt,
        tick_count=state.tick_count + 1,
        last_path=path,
    )


def ground_truth_completion(state: MillState) -> np.ndarray:
    return np.clip(state.sample_removed / state.sample_thickness, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Episode
# ---------------------------------------------------------------------------


@dataclass
class EpisodeOutcome:
    success: bool
    failure_kind: str
    milling_time_s: float
    max_overshoot_mm: float
    ticks: int = 0
    min_true_completion: float = 0.0
    calibration_rmse_mm: float = float("nan")
    center_error_mm: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpisodeTrace:
    """Per-tick record of the live setpoints and completion readings."""

    n: int
    rows: list = field(default_factory=list)
    initial_trajectory: Trajectory | None = None

    @property
    def columns(self) -> list[str]:
        return (
            ["tick", "sim_time"]
            + [f"z_{i}" for i in range(self.n)]
            + [f"c_{i}" for i in range(self.n)]
            + ["depth_min", "depth_max", "membrane_intact"]
        )

    def record(self, tick: int, sim_time: float, z, c, depth, intact: bool) -> None:
        self.rows.append((tick, sim_time, np.array(z), np.array(c), float(depth.min()), float(depth.max()), intact))

    def write_csv(self, path, meta: dict | None = None) -> None:
        rows = ([tick, t, *z, *c, dmin, dmax, intact] for tick, t, z, c, dmin, dmax, intact in self.rows)
        records.write_csv(path, self.columns, rows, meta)


def write_outcome_json(path, outcome: EpisodeOutcome, extra: dict | None = None) -> None:
    records.write_json(path, {**outcome.to_dict(), **(extra or {})})


def plan_initial_trajectory(skull, settings: EpisodeSettings, oracle: PerceptionOracle, surface=None):
    """Calibrate, localise the centre and build the offset ring in {R}.

    Returns:
        (trajectory in {R}, calibration report, located centre in {Mi}).
    """
    surface = surface if surface is not None else skull
    k = settings.intrinsics
    cal = auto_calibrate(np.array(settings.setpoints), oracle, k)
    bregma_px, lambda_px = oracle.observe_landmarks(skull)
    center = locate_center(bregma_px, lambda_px, settings.l, surface, k)
    fit, normals = sample_fitted(center, settings.radius, settings.n, surface)
    traj = Trajectory.initial(fit, normals, center, settings.radius, settings.offset)
    return traj.transformed(cal.transform), cal, center


def drill_path(traj: Trajectory, oracle: PerceptionOracle, subdivisions: int) -> np.ndarray:
    """Ball centres in {Mi} along the commanded ring, ``subdivisions`` per interval."""
    return oracle.scene.apply(traj.spline().dense(subdivisions))


def run_episode(
    skull,
    settings: EpisodeSettings,
    oracle: PerceptionOracle,
    surface=None,
    record_trace: bool = True,
) -> tuple[EpisodeOutcome, EpisodeTrace]:
    """One full milling attempt from calibration to stop, failure, or timeout."""
    traj, cal, center = plan_initial_trajectory(skull, settings, oracle, surface)
    sub = settings.spline_subdivisions
    true_center = skull.bregma + settings.l * (skull.lambda_ - skull.bregma)
    trace = EpisodeTrace(n=settings.n, initial_trajectory=traj)

    path = drill_path(traj, oracle, sub)
    grid = RingGrid.around(path[:, :2], skull, settings.drill_radius, settings.grid_resolution)
    # sample columns sit where the commanded fit points land on the skull
    sample_xy = oracle.scene.apply(traj.fit_points)[:, :2]
    state = MillState.fresh(grid, sample_xy, skull, settings.membrane_margin)

    def outcome(kind: str) -> EpisodeOutcome:
        truth = ground_truth_completion(state)
        return EpisodeOutcome(
            success=kind == "none",
            failure_kind=kind,
            milling_time_s=float(state.sim_time),
            max_overshoot_mm=float(state.overshoot().max()),
            ticks=int(state.tick_count),
            min_true_completion=float(truth.min()),
            calibration_rmse_mm=float(cal.rmse_mm),
            center_error_mm=float(np.linalg.norm(center[:2] - true_center[:2])),
        )

    probe = np.zeros(grid.shape)
    grid.cut(path, probe)
    if probe.max() > CONTACT_TOL or point_cuts(state.sample_xy, state.sample_z_top, path, settings.drill_radius).max() > CONTACT_TOL:
        return outcome("calibration_contact"), trace

    faults = oracle.random_faults(settings.n)
    damper = settings.damper
    max_ticks = int(np.ceil(settings.timeout_s / damper.dt - 1e-9))
    for tick in range(max_ticks):
        state = step(state, path, damper.dt, samples_every=sub)
        truth = ground_truth_completion(state)
        reading = oracle.completion(truth, tick, faults)
        if record_trace:
            trace.record(tick, state.sim_time, state.drill_center[:, 2], reading, state.sample_removed, state.membrane_intact)
        if not state.membrane_intact:
            return outcome("membrane_damage"), trace
        traj = replace(traj, completion=reading)
        if check_stop(traj, damper.stop_threshold):
            if truth.min() < settings.release_completion:
                return outcome("incomplete"), trace
            return outcome("none"), trace
        traj = damper_step(traj, reading, damper)
        path = drill_path(traj, oracle, sub)
    return outcome("timeout"), trace
