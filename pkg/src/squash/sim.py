"""Synthetic multi-traversal scenes and the ephemerality proxy benchmark.

The benchmark stands in for detection quality at desk scale: persistent
objects (identical across traversals) versus transient objects (fresh
each traversal) give every current-scan point a ground-truth label, and a
point's history magnitude — queried from a store built on past traversals
only — should separate the two. AUC of that separation is the reported
score. This isolates exactly the signal history features carry and needs
no labels or trained models; it is a proxy, not a detection benchmark.

Scenes are axis-aligned boxes sampled with uniform surface points plus
optional Gaussian sensor noise, the simplest geometry exhibiting the
persistent/transient dichotomy. The ego path runs along +x; objects sit
in the middle band of the extent so that anchor windows offset by up to
half the anchor spacing still cover every object. Current-scan transients
are placed with a clearance margin from everything occupied in any past
traversal, so in the noiseless case their neighborhoods are provably
empty of history.

All generation is driven by a single seed through spawned RNG streams;
runs are bit-reproducible.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .builder import Anchor, build_squash
from .errors import ValidationError
from .featurizer import FeaturizerSpec
from .geometry import Pose6DoF, rotation_about_z, transform_points
from .pointcloud import PointCloud
from .query import QueryKernel, averaging_kernel, query
from .scan_model import BuildConfig, Traversal

DEFAULT_SIGMA_SWEEP = (0.0, 0.1, 0.2, 0.3, 0.5, 1.0)
DEFAULT_T_SWEEP = (1, 2, 5)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    extent_m: tuple = (60.0, 40.0, 4.0)
    n_persistent: int = 8
    persistent_size_range_m: tuple = (1.0, 2.5)
    n_transient: int = 5
    transient_size_range_m: tuple = (0.5, 1.5)
    points_per_object: int = 400
    sensor_noise_m: float = 0.0
    n_traversals: int = 5
    frame_spacing_m: float = 2.0
    sensor_range_m: float = 50.0
    sensor_height_m: float = 1.6
    clearance_m: float = 1.5

    def __post_init__(self):
        if self.n_persistent < 0 or self.n_transient < 0 or self.points_per_object < 0:
            raise ValidationError("object and point counts must be >= 0")
        if any(e <= 0 for e in self.extent_m):
            raise ValidationError("extent must be positive")
        if self.sensor_noise_m < 0:
            raise ValidationError("sensor noise must be >= 0")
        if self.n_traversals < 1:
            raise ValidationError("need at least one past traversal")


@dataclass(frozen=True)
class NoiseModel:
    loc_sigma_m: float = 0.0
    bearing_sigma_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.loc_sigma_m < 0 or self.bearing_sigma_deg < 0:
            raise ValidationError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class Scene:
    """Generated scene: past traversals plus a labelled held-out scan."""

    traversals: list
    current_scan: PointCloud  # sensor frame
    current_pose: Pose6DoF
    labels_persistent: np.ndarray  # (n,) bool, True = persistent
    spec: SceneSpec


@dataclass(frozen=True)
class _Box:
    center: np.ndarray
    size: np.ndarray

    def inflated(self, margin: float) -> "_Box":
        return _Box(self.center, self.size + 2.0 * margin)

    def intersects(self, other: "_Box") -> bool:
        half = (self.size + other.size) / 2.0
        return bool(np.all(np.abs(self.center - other.center) <= half))


def _sample_boxes(rng, count: int, size_range, extent, x_band) -> list[_Box]:
    boxes = []
    for _ in range(count):
        size = rng.uniform(size_range[0], size_range[1], size=3)
        cx = rng.uniform(x_band[0], x_band[1])
        cy = rng.uniform(-extent[1] / 2 + size[1] / 2, extent[1] / 2 - size[1] / 2)
        cz = size[2] / 2  # boxes rest on the ground plane
        boxes.append(_Box(np.array([cx, cy, cz]), size))
    return boxes


def _sample_clear_boxes(rng, count, size_range, extent, x_band, obstacles, clearance, tries=200):
    """Boxes whose clearance-inflated volume avoids every obstacle box."""
    boxes = []
    for _ in range(count):
        for _attempt in range(tries):
            candidate = _sample_boxes(rng, 1, size_range, extent, x_band)[0]
            inflated = candidate.inflated(clearance)
            if not any(inflated.intersects(obs) for obs in obstacles):
                boxes.append(candidate)
                break
        # Unplaceable boxes are skipped; the scene just ends up sparser.
    return boxes


def _surface_points(rng, box: _Box, n: int) -> np.ndarray:
    """Uniform samples on the box surface, area-weighted across faces."""
    sx, sy, sz = box.size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 3))
    pts = u * box.size[None, :]
    axis = faces // 2
    sign = np.where(faces % 2 == 0, -0.5, 0.5)
    pts[np.arange(n), axis] = sign * box.size[axis]
    return pts + box.center[None, :]


def _scan_from_boxes(rng, boxes, pose_t, spec: SceneSpec):
    """One frame: surface samples of every box within sensor range, with
    per-box provenance indices."""
    chunks = []
    owners = []
    for bi, box in enumerate(boxes):
        if np.linalg.norm(box.center - pose_t) > spec.sensor_range_m:
            continue
        pts = _surface_points(rng, box, spec.points_per_object)
        if spec.sensor_noise_m > 0:
            pts = pts + rng.normal(0.0, spec.sensor_noise_m, size=pts.shape)
        chunks.append(pts)
        owners.append(np.full(pts.shape[0], bi))
    if not chunks:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    return np.concatenate(chunks), np.concatenate(owners)


def generate_scene(spec: SceneSpec) -> Scene:
    """Build T past traversals and a labelled current scan.

    Persistent boxes are shared by every traversal and the current scan;
    transient boxes are resampled per traversal. Current-scan transients
    keep ``clearance_m`` distance from all historical geometry.
    """
    root = np.random.SeedSequence(spec.seed)
    streams = [np.random.default_rng(s) for s in root.spawn(spec.n_traversals + 3)]
    rng_layout, rng_current, rng_scan = streams[0], streams[1], streams[2]
    rng_past = streams[3:]

    extent = np.asarray(spec.extent_m, dtype=np.float64)
    # Objects sit in a mid-route band ahead of the current pose so that
    # anchor windows offset by up to half the anchor spacing still select
    # frames that observe every object.
    x_band = (0.45 * extent[0], 0.65 * extent[0])
    persistent = _sample_boxes(
        rng_layout, spec.n_persistent, spec.persistent_size_range_m, extent, x_band
    )

    route_x = np.arange(0.0, extent[0] + 1e-9, spec.frame_spacing_m)
    poses = [
        Pose6DoF(np.eye(3), np.array([x, 0.0, spec.sensor_height_m])) for x in route_x
    ]

    traversals = []
    past_transients: list[_Box] = []
    for t in range(spec.n_traversals):
        rng = rng_past[t]
        transients = _sample_boxes(
            rng, spec.n_transient, spec.transient_size_range_m, extent, x_band
        )
        past_transients.extend(transients)
        boxes = persistent + transients
        frames = []
        for pose in poses:
            pts, _ = _scan_from_boxes(rng, boxes, pose.translation, spec)
            sensor_pts = pts - pose.translation[None, :]  # identity heading
            frames.append((PointCloud(sensor_pts), pose))
        traversals.append(
            Traversal(frames=tuple(frames), name=f"traversal_{t:03d}", timestamp=float(t))
        )

    # Current scan: persistent boxes plus fresh transients in historically
    # empty space.
    current_transients = _sample_clear_boxes(
        rng_current,
        spec.n_transient,
        spec.transient_size_range_m,
        extent,
        x_band,
        [b for b in persistent] + past_transients,
        spec.clearance_m,
    )
    current_pose = Pose6DoF(
        np.eye(3), np.array([extent[0] * 0.25, 0.0, spec.sensor_height_m])
    )
    boxes = persistent + current_transients
    pts, owners = _scan_from_boxes(rng_scan, boxes, current_pose.translation, spec)
    labels = owners < len(persistent)
    sensor_pts = pts - current_pose.translation[None, :]
    return Scene(
        traversals=traversals,
        current_scan=PointCloud(sensor_pts),
        current_pose=current_pose,
        labels_persistent=labels,
        spec=spec,
    )


def perturb_pose(pose: Pose6DoF, noise: NoiseModel, rng=None) -> Pose6DoF:
    """Localization noise: translate by a uniform random unit vector scaled
    by eps ~ N(0, sigma^2); bearing noise: rotate about the up axis by an
    angle ~ N(0, bearing_sigma^2).

    The unit direction and the standard-normal draws do not depend on the
    sigmas, so sweeping sigma with a fixed seed scales the same
    perturbation (common random numbers across the sweep).
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    v = rng.standard_normal(3)
    while np.linalg.norm(v) < 1e-12:  # pragma: no cover - measure-zero
        v = rng.standard_normal(3)
    u = v / np.linalg.norm(v)
    eps = rng.standard_normal() * noise.loc_sigma_m
    angle = math.radians(rng.standard_normal() * noise.bearing_sigma_deg)
    translation = pose.translation + u * eps
    if angle == 0.0:
        rotation = pose.rotation
    else:
        rotation = rotation_about_z(angle) @ pose.rotation
    return Pose6DoF(rotation, translation)


def auc_score(scores: np.ndarray, labels_positive: np.ndarray) -> float | None:
    """Rank-based AUC (ties get average ranks). None when one class is empty."""
    labels_positive = np.asarray(labels_positive, dtype=bool)
    n_pos = int(labels_positive.sum())
    n_neg = labels_positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    # Average ranks over tied runs.
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [scores.size]])
    group_avg = 0.5 * (starts + 1 + ends)
    ranks[order] = np.repeat(group_avg, ends - starts)
    rank_sum = ranks[labels_positive].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def best_threshold_accuracy(scores: np.ndarray, labels_positive: np.ndarray) -> float:
    """Accuracy of the best single threshold (predict positive at >= t)."""
    labels = np.asarray(labels_positive, dtype=bool)
    order = np.argsort(scores, kind="mergesort")
    sorted_labels = labels[order]
    n = labels.size
    n_pos = int(labels.sum())
    # Threshold below everything: all predicted positive.
    best = n_pos / n
    neg_below = np.cumsum(~sorted_labels)
    pos_below = np.cumsum(sorted_labels)
    sorted_scores = scores[order]
    for i in range(n):
        # Threshold just above sorted_scores[i]: i+1 lowest predicted negative.
        if i + 1 < n and sorted_scores[i + 1] == sorted_scores[i]:
            continue
        correct = neg_below[i] + (n_pos - pos_below[i])
        best = max(best, correct / n)
    return float(best)


def _perturb_traversal(traversal: Traversal, noise: NoiseModel, rng) -> Traversal:
    """Independent per-frame pose noise (deployment-side localization error)."""
    frames = tuple(
        (cloud, perturb_pose(pose, noise, rng=rng)) for cloud, pose in traversal.frames
    )
    return Traversal(frames=frames, name=traversal.name, timestamp=traversal.timestamp)


def run_ephemerality(
    scene: Scene,
    cfg: BuildConfig,
    feat_spec: FeaturizerSpec,
    noise: NoiseModel,
    *,
    t_use: int | None = None,
    anchor_offset_m: float = 0.0,
    kernel: QueryKernel | None = None,
    backend: str | None = None,
    grid_cache: dict | None = None,
    perturb_past: bool = False,
) -> dict:
    """One benchmark run: build from past traversals, query the (optionally
    perturbed) current scan, score points by history magnitude.

    Localization noise applies to the test scan only by default;
    ``perturb_past`` also draws independent per-frame noise for the past
    traversals (whether deployment history is noisy too is a protocol
    choice, so both are supported).
    """
    if t_use is not None:
        cfg = cfg.with_t_max(t_use)
    traversals = scene.traversals
    if perturb_past:
        past_rng = np.random.default_rng(np.random.SeedSequence(noise.seed).spawn(1)[0])
        traversals = [_perturb_traversal(t, noise, past_rng) for t in traversals]
        grid_cache = None  # perturbed grids must not alias the clean ones
    reference = traversals[-1]
    base_arc = float(scene.current_pose.translation[0] - reference.positions()[0, 0])
    anchor_arc = base_arc + anchor_offset_m
    anchor = Anchor(arclength_m=anchor_arc, position=reference.position_at(anchor_arc))

    t0 = time.perf_counter()
    record = build_squash(
        traversals, anchor, cfg, feat_spec,
        grid_cache=grid_cache, backend=backend,
    )
    build_s = time.perf_counter() - t0

    perturbed = perturb_pose(scene.current_pose, noise)
    global_scan = transform_points(scene.current_scan, perturbed)
    if kernel is None:
        kernel = averaging_kernel(cfg.kernel_size, record.grid.d)
    t0 = time.perf_counter()
    endowed = query(global_scan, record, kernel, backend=backend)
    query_s = time.perf_counter() - t0

    scores = np.linalg.norm(endowed.history.astype(np.float64), axis=1)
    auc = auc_score(scores, scene.labels_persistent)
    accuracy = (
        best_threshold_accuracy(scores, scene.labels_persistent)
        if auc is not None
        else None
    )
    return {
        "seed": scene.spec.seed,
        "T": record.t_used,
        "sigma_m": noise.loc_sigma_m,
        "bearing_deg": noise.bearing_sigma_deg,
        "anchor_offset_m": anchor_offset_m,
        "perturb_past": perturb_past,
        "auc": auc,
        "accuracy": accuracy,
        "n_points": int(scene.current_scan.n),
        "n_voxels": record.grid.n,
        "timings": {"build_ms": build_s * 1e3, "query_ms": query_s * 1e3},
    }


def ephemerality_benchmark(
    scene_spec: SceneSpec,
    cfg: BuildConfig,
    feat_spec: FeaturizerSpec,
    noise: NoiseModel,
    *,
    sigma_sweep=DEFAULT_SIGMA_SWEEP,
    t_sweep=DEFAULT_T_SWEEP,
    backend: str | None = None,
) -> dict:
    """Full report for one scene: base run plus traversal-count and
    localization-noise curves."""
    scene = generate_scene(scene_spec)
    cache: dict = {}
    base = run_ephemerality(scene, cfg, feat_spec, noise, backend=backend, grid_cache=cache)
    t_curve = [
        run_ephemerality(scene, cfg, feat_spec, noise, t_use=t, backend=backend,
                         grid_cache=cache)
        for t in t_sweep
    ]
    sigma_curve = [
        run_ephemerality(
            scene, cfg, feat_spec, replace(noise, loc_sigma_m=sigma),
            backend=backend, grid_cache=cache,
        )
        for sigma in sigma_sweep
    ]
    return {"base": base, "t_curve": t_curve, "sigma_curve": sigma_curve}
