"""Traversal ingestion: scan sequences with poses and dense combining.

A traversal is one recorded drive: an ordered list of (sensor-frame scan,
global pose) pairs. Frames are parameterized by cumulative ego-path
arclength, which pins down what distance along the route means when
placing anchors and selecting combine windows.

On disk a traversal is a directory with ``poses.csv`` and
``frames/NNNNNN.hpc`` (NNNNNN = zero-padded frame id); a route is a
directory of traversal subdirectories listed in ``route.json`` with
timestamps that define recency.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptySelectionError, ValidationError
from .geometry import Pose6DoF, load_poses_csv, save_poses_csv, transform_points
from .pointcloud import PointCloud, concat_clouds, load_hpc, save_hpc

__all__ = [
    "PointCloud",
    "BuildConfig",
    "Traversal",
    "combine_dense",
    "anchor_locations",
    "load_traversal",
    "save_traversal",
    "load_route",
    "save_route",
]

# Slack for float comparisons on arclengths (window inclusion, stride buckets).
_ARC_EPS = 1e-9


@dataclass(frozen=True)
class BuildConfig:
    """Offline-build hyper-parameters.

    Defaults: scans within [anchor - h_start, anchor + h_end] = [l, l + 20] m
    are combined, keeping one scan per 5 m; anchors every 10 m; at most the
    5 most recent traversals; 0.3 m voxels; a 5-wide query kernel producing
    64 history channels.
    """

    h_start_m: float = 0.0
    h_end_m: float = 20.0
    frame_stride_m: float = 5.0
    anchor_spacing_m: float = 10.0
    t_max: int = 5
    delta_m: float = 0.3
    kernel_size: int = 5
    d_history: int = 64

    def __post_init__(self):
        if self.h_start_m < 0:
            raise ValidationError("h_start_m must be >= 0")
        if self.h_end_m <= 0:
            raise ValidationError("h_end_m must be > 0")
        if self.frame_stride_m <= 0:
            raise ValidationError("frame_stride_m must be > 0")
        if self.anchor_spacing_m <= 0:
            raise ValidationError("anchor_spacing_m must be > 0")
        if self.t_max < 1:
            raise ValidationError("t_max must be >= 1")
        if self.delta_m <= 0:
            raise ValidationError("delta_m must be > 0")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError("kernel_size must be odd and >= 1")
        if self.d_history < 1:
            raise ValidationError("d_history must be >= 1")

    def with_t_max(self, t_max: int) -> "BuildConfig":
        return replace(self, t_max=t_max)


def _arclengths_from_poses(poses: list[Pose6DoF]) -> np.ndarray:
    arcs = np.zeros(len(poses))
    for i in range(1, len(poses)):
        step = np.linalg.norm(poses[i].translation - poses[i - 1].translation)
        arcs[i] = arcs[i - 1] + step
    return arcs


@dataclass(frozen=True)
class Traversal:
    """One drive through a route: sensor-frame scans with global poses."""

    frames: tuple
    arclengths: np.ndarray = field(default=None)
    name: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValidationError("traversal must contain at least one frame")
        for cloud, pose in frames:
            if not isinstance(cloud, PointCloud) or not isinstance(pose, Pose6DoF):
                raise ValidationError("frames must be (PointCloud, Pose6DoF) pairs")
        poses = [p for _, p in frames]
        arcs = self.arclengths
        if arcs is None:
            arcs = _arclengths_from_poses(poses)
        else:
            arcs = np.asarray(arcs, dtype=np.float64)
            if arcs.shape != (len(frames),):
                raise ValidationError("arclengths must have one entry per frame")
            if arcs[0] != 0.0:
                raise ValidationError("arclengths must start at 0")
            if np.any(np.diff(arcs) < 0):
                raise ValidationError("arclengths must be non-decreasing")
            expected = _arclengths_from_poses(poses)
            if not np.allclose(arcs, expected, rtol=0.0, atol=1e-6):
                raise ValidationError(
                    "arclength increments must match consecutive pose distances (1e-6)"
                )
        arcs.flags.writeable = False
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "arclengths", arcs)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def total_arclength(self) -> float:
        return float(self.arclengths[-1])

    def positions(self) -> np.ndarray:
        """Per-frame global sensor positions, (n_frames, 3)."""
        return np.stack([pose.translation for _, pose in self.frames])

    def position_at(self, arclength_m: float) -> np.ndarray:
        """Global position at an arclength, linearly interpolated along the path."""
        pos = self.positions()
        arcs = self.arclengths
        return np.array([np.interp(arclength_m, arcs, pos[:, i]) for i in range(3)])


def combine_dense(traversal: Traversal, anchor_arclength: float, cfg: BuildConfig) -> PointCloud:
    """Union of globally-transformed frames around an anchor location.

    Selects frames with arclength in [anchor - h_start, anchor + h_end]
    (both ends inclusive), keeps the first frame in each frame_stride_m
    bucket, and concatenates the frames transformed to the global frame.
    Overlapping points are kept: the union is deliberately denser than
    any single scan, which is what gives distant regions useful detail.
    """
    arcs = traversal.arclengths
    if anchor_arclength < arcs[0] - _ARC_EPS or anchor_arclength > arcs[-1] + _ARC_EPS:
        raise EmptySelectionError(
            f"anchor {anchor_arclength} m outside traversal arclength range "
            f"[{arcs[0]}, {arcs[-1]}]"
        )
    lo = anchor_arclength - cfg.h_start_m
    hi = anchor_arclength + cfg.h_end_m
    selected: list[PointCloud] = []
    taken_buckets: set[int] = set()
    for idx in range(traversal.n_frames):
        a = arcs[idx]
        if a < lo - _ARC_EPS or a > hi + _ARC_EPS:
            continue
        bucket = math.floor((a - lo) / cfg.frame_stride_m + _ARC_EPS)
        if bucket in taken_buckets:
            continue
        taken_buckets.add(bucket)
        cloud, pose = traversal.frames[idx]
        selected.append(transform_points(cloud, pose))
    if not selected:
        raise EmptySelectionError(
            f"window [{lo}, {hi}] m selected no frames from traversal {traversal.name!r}"
        )
    return concat_clouds(selected)


def anchor_locations(traversal: Traversal, cfg: BuildConfig) -> np.ndarray:
    """Anchor arclengths {0, s, 2s, ...} up to and including the last multiple
    <= total arclength."""
    s = cfg.anchor_spacing_m
    n = math.floor(traversal.total_arclength / s + _ARC_EPS)
    return np.arange(n + 1, dtype=np.float64) * s


# --- on-disk layout -------------------------------------------------------

def save_traversal(traversal: Traversal, directory) -> None:
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, (cloud, pose) in enumerate(traversal.frames):
        rows.append((idx, pose))
        save_hpc(cloud, directory / "frames" / f"{idx:06d}.hpc")
    save_poses_csv(rows, directory / "poses.csv")


def load_traversal(directory, name: str = "", timestamp: float = 0.0) -> Traversal:
    directory = Path(directory)
    rows = load_poses_csv(directory / "poses.csv")
    frames = []
    for frame_id, pose in rows:
        cloud = load_hpc(directory / "frames" / f"{frame_id:06d}.hpc")
        frames.append((cloud, pose))
    return Traversal(frames=tuple(frames), name=name or directory.name, timestamp=timestamp)


def save_route(route_dir, route_id: str, traversals: list[Traversal]) -> None:
    """Write traversal subdirectories plus route.json listing them with timestamps."""
    route_dir = Path(route_dir)
    route_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in traversals:
        name = t.name or f"traversal_{len(entries):03d}"
        save_traversal(t, route_dir / name)
        entries.append({"name": name, "timestamp": t.timestamp})
    manifest = {"route_id": route_id, "traversals": entries}
    (route_dir / "route.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_route(route_dir) -> tuple[str, list[Traversal]]:
    route_dir = Path(route_dir)
    manifest_path = route_dir / "route.json"
    if not manifest_path.is_file():
        raise ValidationError(f"{route_dir}: missing route.json")
    try:
        manifest = json.loads(manifest_path.read_text())
        route_id = manifest["route_id"]
        entries = manifest["traversals"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{manifest_path}: malformed manifest: {exc}") from exc
    traversals = []
    for entry in entries:
        traversals.append(
            load_traversal(
                route_dir / entry["name"],
                name=entry["name"],
                timestamp=float(entry.get("timestamp", 0.0)),
            )
        )
    if not traversals:
        raise ValidationError(f"{manifest_path}: route lists no traversals")
    return route_id, traversals
