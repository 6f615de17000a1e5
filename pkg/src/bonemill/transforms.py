"""Proper rigid transforms in 3D."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """``p -> r @ p + t`` with ``r`` a proper rotation."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=ORTHO_TOL * 10) or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL * 10:
            raise ConfigError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_euler(cls, angles_deg, translation, seq: str = "xyz") -> "RigidTransform":
        return cls(Rotation.from_euler(seq, angles_deg, degrees=True).as_matrix(), translation)

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.r.T, -self.r.T @ self.t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self o other``: apply ``other`` first."""
        return RigidTransform(self.r @ other.r, self.r @ other.t + self.t)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.r.T + self.t

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.r.T


def rotation_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle (rad) between two rotation matrices."""
    # chord form; arccos of the trace loses precision near zero
    chord = np.linalg.norm(np.asarray(a) - np.asarray(b)) / (2.0 * np.sqrt(2.0))
    return float(2.0 * np.arcsin(min(chord, 1.0)))
