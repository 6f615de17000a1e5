"""Milling-ring trajectory: surface fitting, smoothing, and completion-damped descent.

The ring is ``n`` samples on a circle of radius ``r`` around the located
centre, lifted onto the surface and backed off along the surface normals by
the drill radius plus a safety gap. During milling each setpoint descends
along its own inward normal at a speed reduced in proportion to the
completion recognised there, and the loop stops once every sample reads as
penetrated.

The continuous path through the setpoints is a constrained cubic spline:
knot slopes are the harmonic mean of the adjacent secants,
or zero at local extrema, so no coordinate overshoots its bounding knots.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import records
from .errors import ConfigError, DimensionMismatch, TooFewKnots
from .transforms import RigidTransform

DEFAULT_N = 32
DEFAULT_RADIUS = 2.0
DEFAULT_DRILL_RADIUS = 0.5
DEFAULT_SAFETY_GAP = 0.5
TWO_PI = 2.0 * np.pi


def ring_angles(n: int) -> np.ndarray:
    """Sample angles ``2*pi*i/n`` for ``i = 1..n``."""
    return TWO_PI * np.arange(1, n + 1) / n


def sample_fitted(center, r: float, n: int, surface) -> tuple[np.ndarray, np.ndarray]:
    """Ring samples on ``surface`` and their upward normals, each ``(n, 3)``.

    Raises:
        OutOfExtent: part of the ring leaves the surface.
    """
    if n < 4:
        raise ConfigError(f"need n >= 4 samples, got {n}")
    theta = ring_angles(n)
    c = np.asarray(center, dtype=float)
    xy = np.column_stack([r * np.cos(theta) + c[0], r * np.sin(theta) + c[1]])
    return surface.query_many(xy)


def offset_initial(points, normals, r_d: float = DEFAULT_DRILL_RADIUS, delta_d: float = DEFAULT_SAFETY_GAP) -> np.ndarray:
    """Back each sample off along its normal by ``r_d + delta_d``."""
    return np.asarray(points, dtype=float) + (r_d + delta_d) * np.asarray(normals, dtype=float)


def to_robot_frame(points, tf: RigidTransform) -> np.ndarray:
    return tf.apply(points)


# ---------------------------------------------------------------------------
# Constrained cubic spline
# ---------------------------------------------------------------------------


def _constrained_slopes(t: np.ndarray, y: np.ndarray, open_ends: bool) -> np.ndarray:
    """Knot slopes for every column of ``y`` (shape (m, d)) at parameters ``t``."""
    h = np.diff(t)[:, None]
    sec = np.diff(y, axis=0) / h
    m = np.zeros_like(y)
    left, right = sec[:-1], sec[1:]
    same = left * right > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        harm = 2.0 / (1.0 / left + 1.0 / right)
    m[1:-1] = np.where(same, harm, 0.0)
    if open_ends:
        m[0] = 1.5 * sec[0] - 0.5 * m[1]
        m[-1] = 1.5 * sec[-1] - 0.5 * m[-2]
    return m


@dataclass(frozen=True)
class SplineCurve:
    """Piecewise cubic curve: on ``[t_i, t_{i+1}]`` it is ``sum_k coef[i, k] * (t - t_i)^k``.

    ``knots_t`` holds ``n_intervals + 1`` breakpoints; for a closed curve the
    last breakpoint is the first plus ``period``.
    """

    knots_t: np.ndarray
    knots: np.ndarray
    coef: np.ndarray
    closed: bool
    period: float | None = None

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        t0 = self.knots_t[0]
        if self.closed:
            # wrap only what lies outside one period so knot parameters stay exact
            outside = (t < t0) | (t >= self.knots_t[-1])
            t = np.where(outside, t0 + np.mod(t - t0, self.period), t)
        idx = np.clip(np.searchsorted(self.knots_t, t, side="right") - 1, 0, len(self.coef) - 1)
        return idx, t - self.knots_t[idx]

    def __call__(self, t) -> np.ndarray:
        idx, s = self._locate(t)
        c = self.coef[idx]
        s = s[..., None]
        out = c[..., 0, :] + s * (c[..., 1, :] + s * (c[..., 2, :] + s * c[..., 3, :]))
        if not self.closed:
            # the end knot is the far end of the last cubic; return it exactly
            out[np.asarray(t) == self.knots_t[-1]] = self.knots[-1]
        return out

    def derivative(self, t) -> np.ndarray:
        idx, s = self._locate(t)
        c = self.coef[idx]
        s = s[..., None]
        return c[..., 1, :] + s * (2.0 * c[..., 2, :] + 3.0 * s * c[..., 3, :])

    def dense(self, per_interval: int) -> np.ndarray:
        """Points at ``per_interval`` evenly spaced parameters in each interval (knots included)."""
        frac = np.arange(per_interval) / per_interval
        t = (self.knots_t[:-1, None] + np.diff(self.knots_t)[:, None] * frac).ravel()
        if not self.closed:
            t = np.append(t, self.knots_t[-1])
        return self(t)


def fit_spline(knots, closed: bool = True, params: Sequence[float] | None = None) -> SplineCurve:
    """Constrained cubic spline through ``knots`` (shape (n, d)).

    A closed curve uses the ring angles ``2*pi*i/n`` as parameters and
    wraps three knots on each side before computing slopes. An open curve
    uses ``params`` (default ``0..n-1``) and the one-sided end slopes.

    Raises:
        TooFewKnots: fewer than four knots.
    """
    y = np.asarray(knots, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = len(y)
    if n < 4:
        raise TooFewKnots(f"need at least 4 knots, got {n}")
    if closed:
        t = ring_angles(n) if params is None else np.asarray(params, dtype=float)
        period = TWO_PI if params is None else float(t[-1] - t[0] + (t[1] - t[0]))
        pad = 3
        tp = np.concatenate([t[-pad:] - period, t, t[:pad] + period])
        yp = np.concatenate([y[-pad:], y, y[:pad]])
        slopes = _constrained_slopes(tp, yp, open_ends=False)[pad : pad + n + 1]
        t_ext = np.append(t, t[0] + period)
        y_ext = np.vstack([y, y[:1]])
    else:
        t = np.arange(n, dtype=float) if params is None else np.asarray(params, dtype=float)
        if np.any(np.diff(t) <= 0):
            raise ConfigError("spline parameters must be strictly increasing")
        period = None
        slopes = _constrained_slopes(t, y, open_ends=True)
        t_ext, y_ext = t, y
    h = np.diff(t_ext)[:, None]
    y0, y1 = y_ext[:-1], y_ext[1:]
    m0, m1 = slopes[:-1], slopes[1:]
    d = (y1 - y0) / h
    coef = np.stack([y0, m0, (3.0 * d - 2.0 * m0 - m1) / h, (m0 + m1 - 2.0 * d) / h**2], axis=1)
    return SplineCurve(knots_t=t_ext, knots=y, coef=coef, closed=closed, period=period)


# ---------------------------------------------------------------------------
# Live trajectory and velocity damper
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DamperConfig:
    v_max: float = 0.05
    dt: float = 0.1
    stop_threshold: float = 0.999
    law: str = "linear"

    def __post_init__(self):
        if not self.v_max >= 0:
            raise ConfigError("damper.v_max must be >= 0")
        if not self.dt > 0:
            raise ConfigError("damper.dt must be > 0")
        if not 0.9 < self.stop_threshold <= 1.0:
            raise ConfigError("damper.stop_threshold must lie in (0.9, 1]")
        if self.law not in DAMPING_LAWS:
            raise ConfigError(f"damper.law must be one of {sorted(DAMPING_LAWS)}")


DAMPING_LAWS = {"linear": lambda c: 1.0 - c}


@dataclass(frozen=True)
class Trajectory:
    """Ring setpoints: ``current = fit + (offset - descent) * normal``.

    ``descent`` is the cumulative travel of each setpoint along its inward
    normal; it never decreases.
    """

    fit_points: np.ndarray
    normals: np.ndarray
    offset: float
    descent: np.ndarray
    completion: np.ndarray
    center: np.ndarray
    radius: float

    @classmethod
    def initial(cls, fit_points, normals, center, radius: float, offset: float) -> "Trajectory":
        fit_points = np.asarray(fit_points, dtype=float)
        n = len(fit_points)
        if n < 4:
            raise ConfigError(f"need n >= 4 samples, got {n}")
        return cls(
            fit_points=fit_points,
            normals=np.asarray(normals, dtype=float),
            offset=float(offset),
            descent=np.zeros(n),
            completion=np.zeros(n),
            center=np.asarray(center, dtype=float),
            radius=float(radius),
        )

    @property
    def n(self) -> int:
        return len(self.fit_points)

    @property
    def current_points(self) -> np.ndarray:
        return self.fit_points + (self.offset - self.descent)[:, None] * self.normals

    def transformed(self, tf: RigidTransform) -> "Trajectory":
        """Same trajectory expressed in another frame."""
        return replace(
            self,
            fit_points=tf.apply(self.fit_points),
            normals=tf.rotate(self.normals),
            center=tf.apply(self.center),
        )

    def spline(self) -> SplineCurve:
        return fit_spline(self.current_points, closed=True)


def damper_step(
    traj: Trajectory,
    completion,
    cfg: DamperConfig,
    channels: Sequence[np.ndarray] = (),
) -> Trajectory:
    """Advance every setpoint by one control tick.

    Each setpoint descends ``v_max * dt * (1 - c_i)`` along its inward
    normal; samples at or above ``stop_threshold`` hold still. Extra damping
    ``channels`` (completion-like vectors) combine by taking the slowest
    speed.

    Raises:
        DimensionMismatch: any vector does not have one entry per sample.
    """
    c = np.clip(np.asarray(completion, dtype=float), 0.0, 1.0)
    if c.shape != (traj.n,):
        raise DimensionMismatch(f"completion has shape {c.shape}, expected ({traj.n},)")
    law = DAMPING_LAWS[cfg.law]
    speed = cfg.v_max * law(c)
    for ch in channels:
        ch = np.clip(np.asarray(ch, dtype=float), 0.0, 1.0)
        if ch.shape != (traj.n,):
            raise DimensionMismatch(f"damping channel has shape {ch.shape}, expected ({traj.n},)")
        speed = np.minimum(speed, cfg.v_max * law(ch))
    speed = np.where(c >= cfg.stop_threshold, 0.0, np.maximum(speed, 0.0))
    return replace(traj, descent=traj.descent + speed * cfg.dt, completion=c)


def check_stop(traj: Trajectory, stop_threshold: float = 0.999) -> bool:
    return bool(np.all(traj.completion >= stop_threshold))


def write_snapshots(path, snapshots: Sequence[tuple[int, Trajectory]], meta: dict | None = None) -> None:
    """CSV rows ``tick, i, x, y, z, c`` for each recorded trajectory."""
    rows = (
        [tick, i, *traj.current_points[i], traj.completion[i]]
        for tick, traj in snapshots
        for i in range(traj.n)
    )
    records.write_csv(path, ["tick", "i", "x", "y", "z", "c"], rows, meta)
