"""Rigid-body poses and transforms between sensor and global frames.

Convention: the global frame is right-handed with z up. A pose maps
sensor-frame coordinates into the global frame as ``R @ p + t``.

Rotations are stored as 3x3 matrices and validated orthonormal on
ingestion; they are never silently re-orthogonalized. Point transforms
are evaluated column-by-column with a fixed operation order so that any
conforming reimplementation (including non-Python consumers of the file
formats) can reproduce results bit-for-bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .pointcloud import PointCloud

ROTATION_TOL = 1e-6

_POSE_FIELDS = [
    "frame_id",
    "r00", "r01", "r02",
    "r10", "r11", "r12",
    "r20", "r21", "r22",
    "tx", "ty", "tz",
]


@dataclass(frozen=True)
class Pose6DoF:
    """3D rotation + 3D translation placing a sensor frame in the global frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __init__(self, rotation, translation):
        r = np.ascontiguousarray(np.asarray(rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(translation, dtype=np.float64)).reshape(-1)
        if r.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise ValidationError(f"translation must be a 3-vector, got {t.shape}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValidationError("pose entries must be finite")
        if not np.allclose(r @ r.T, np.eye(3), rtol=0.0, atol=ROTATION_TOL):
            raise ValidationError("rotation is not orthonormal within 1e-6")
        if not np.isclose(np.linalg.det(r), 1.0, rtol=ROTATION_TOL, atol=ROTATION_TOL):
            raise ValidationError("rotation determinant must be +1 (no reflections)")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose6DoF":
        return Pose6DoF(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose6DoF":
        rt = self.rotation.T
        return Pose6DoF(rt, -(rt @ self.translation))

    def matrix34(self) -> np.ndarray:
        """Pose as a 3x4 [R | t] matrix."""
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    @staticmethod
    def from_matrix34(m) -> "Pose6DoF":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValidationError(f"expected a 3x4 matrix, got {m.shape}")
        return Pose6DoF(m[:, :3], m[:, 3])


def compose(a: Pose6DoF, b: Pose6DoF) -> Pose6DoF:
    """Pose applying b first, then a: compose(a, b).apply == a.apply(b.apply)."""
    return Pose6DoF(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def rotation_about_z(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_pose(points: np.ndarray, pose: Pose6DoF) -> np.ndarray:
    """Map (n, 3) float64 points through ``R @ p + t``.

    Evaluated per output column as ``((r0*x + r1*y) + r2*z) + t`` so the
    rounding sequence is fixed; do not replace with a matmul, which may
    reassociate the reduction.
    """
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r, t = pose.rotation, pose.translation
    out = np.empty_like(points)
    out[:, 0] = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0]
    out[:, 1] = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1]
    out[:, 2] = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]
    return out


def transform_points(cloud: PointCloud, pose: Pose6DoF) -> PointCloud:
    """Rigidly transform a cloud; feature channels pass through unchanged."""
    # PointCloud construction re-validates finiteness of the result.
    return PointCloud(apply_pose(cloud.points, pose), cloud.channels)


def save_poses_csv(rows: list[tuple[int, Pose6DoF]], path) -> None:
    """Write ``frame_id, r00..r22 (row-major), tx, ty, tz`` with a header line.

    Floats are written with repr precision so they round-trip exactly.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_POSE_FIELDS)
        for frame_id, pose in rows:
            vals = [*pose.rotation.reshape(-1), *pose.translation]
            writer.writerow([frame_id] + [repr(float(v)) for v in vals])


def load_poses_csv(path) -> list[tuple[int, Pose6DoF]]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty pose file (header required)") from None
        if [h.strip() for h in header] != _POSE_FIELDS:
            raise ValidationError(f"{path}: bad or missing header line")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_POSE_FIELDS):
                raise ValidationError(f"{path}:{lineno}: expected {len(_POSE_FIELDS)} fields")
            frame_id = int(row[0])
            vals = [float(v) for v in row[1:]]
            pose = Pose6DoF(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:]))
            rows.append((frame_id, pose))
    return rows
