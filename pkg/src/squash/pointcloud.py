"""Point clouds: ordered 3D points with optional per-point feature channels.

Coordinates are float64 metres; feature channels are float32 (the same width
used for storage accounting). The on-disk ``.hpc`` format stores both as
little-endian float32.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MagicMismatchError, TruncatedFileError, ValidationError

HPC_MAGIC = b"HPC1"
_HPC_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class PointCloud:
    """N points (metres) plus an N x c block of per-point channels, c >= 0."""

    points: np.ndarray
    channels: np.ndarray

    def __init__(self, points, channels=None):
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"points must be (n, 3), got {pts.shape}")
        if channels is None:
            ch = np.zeros((pts.shape[0], 0), dtype=np.float32)
        else:
            ch = np.ascontiguousarray(np.asarray(channels, dtype=np.float32))
            if ch.ndim != 2 or ch.shape[0] != pts.shape[0]:
                raise ValidationError(
                    f"channels must be (n, c) with n={pts.shape[0]}, got {ch.shape}"
                )
        if pts.size and not np.isfinite(pts).all():
            raise ValidationError("point coordinates must be finite")
        if ch.size and not np.isfinite(ch).all():
            raise ValidationError("channel values must be finite")
        pts.flags.writeable = False
        ch.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "channels", ch)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def c(self) -> int:
        return self.channels.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.points.shape == other.points.shape
            and self.channels.shape == other.channels.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.channels, other.channels)
        )

    def __repr__(self) -> str:
        return f"PointCloud(n={self.n}, c={self.c})"


def concat_clouds(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds in order. All clouds must share the channel width."""
    if not clouds:
        raise ValidationError("cannot concatenate zero clouds")
    widths = {c.c for c in clouds}
    if len(widths) != 1:
        raise ValidationError(f"mixed channel widths {sorted(widths)}")
    return PointCloud(
        np.concatenate([c.points for c in clouds], axis=0),
        np.concatenate([c.channels for c in clouds], axis=0),
    )


def save_hpc(cloud: PointCloud, path) -> None:
    """Write a cloud as .hpc. Coordinates are narrowed to float32 on disk."""
    body = _HPC_HEADER.pack(HPC_MAGIC, cloud.n, cloud.c)
    body += cloud.points.astype(np.float32).tobytes()
    body += cloud.channels.tobytes()
    Path(path).write_bytes(body)


def load_hpc(path) -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) < _HPC_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than .hpc header")
    magic, n, c = _HPC_HEADER.unpack_from(data)
    if magic != HPC_MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {magic!r}")
    expected = _HPC_HEADER.size + 4 * n * (3 + c)
    if len(data) != expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f4", offset=_HPC_HEADER.size)
    points = flat[: 3 * n].reshape(n, 3).astype(np.float64)
    channels = flat[3 * n :].reshape(n, c)
    return PointCloud(points, channels)
