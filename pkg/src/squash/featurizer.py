"""Spatial featurizers: dense past-traversal cloud -> sparse feature grid.

Three kinds are supported:

* ``identity`` (d=1): every voxel containing at least one point gets the
  feature [1.0] — plain historical occupancy.
* ``stats`` (d=5): per-voxel [log2(1 + n), mean in-voxel offset x/y/z in
  units of delta (each in [0, 1)), occupancy 1.0]. This is a richer
  untrained baseline added by this artifact, not a published design.
* ``fcn``: the occupancy grid passed through two sparse 3x3x3 convolution
  layers (bias on both, rectifier between) with externally supplied
  weights. Weights are inputs — loaded from a .hfw blob or seeded at
  random — this library performs inference only.

All featurizers are permutation-invariant over input point order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import conv_at
from .errors import (
    ConfigurationError,
    MagicMismatchError,
    TruncatedFileError,
    ValidationError,
)
from .pointcloud import PointCloud
from .sparse_grid import (
    SparseFeatureGrid,
    dilate,
    kernel_offsets,
    quantize_points,
    unique_voxels,
)

FCN_MAGIC = b"HFW1"
_FCN_HEADER = struct.Struct("<4sII")
_FCN_KERNEL_SIZE = 3  # both layers are 3x3x3

KINDS = ("identity", "stats", "fcn")


@dataclass(frozen=True)
class FcnWeights:
    """Two-layer convolutional weights: 1 -> d_mid -> d_out channels."""

    w1: np.ndarray  # (27, 1, d_mid) float32, offset-major lexicographic
    b1: np.ndarray  # (d_mid,) float32
    w2: np.ndarray  # (27, d_mid, d_out) float32
    b2: np.ndarray  # (d_out,) float32

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float32))
            if not np.isfinite(arr).all():
                raise ConfigurationError(f"fcn weights: {name} must be finite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.w1.shape != (27, 1, self.d_mid):
            raise ConfigurationError(f"w1 must be (27, 1, d_mid), got {self.w1.shape}")
        if self.w2.shape != (27, self.d_mid, self.d_out):
            raise ConfigurationError(
                f"w2 must be (27, {self.d_mid}, d_out), got {self.w2.shape}"
            )

    @property
    def d_mid(self) -> int:
        return self.b1.shape[0]

    @property
    def d_out(self) -> int:
        return self.b2.shape[0]


def random_fcn_weights(d_mid: int = 16, d_out: int = 8, seed: int = 0) -> FcnWeights:
    """Seeded Gaussian weights scaled by fan-in; deterministic per seed."""
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((27, 1, d_mid)) / np.sqrt(27.0)
    b1 = rng.standard_normal(d_mid) * 0.1
    w2 = rng.standard_normal((27, d_mid, d_out)) / np.sqrt(27.0 * d_mid)
    b2 = rng.standard_normal(d_out) * 0.1
    return FcnWeights(
        w1.astype(np.float32), b1.astype(np.float32),
        w2.astype(np.float32), b2.astype(np.float32),
    )


def save_fcn_weights(weights: FcnWeights, path) -> None:
    body = _FCN_HEADER.pack(FCN_MAGIC, weights.d_mid, weights.d_out)
    body += weights.w1.tobytes() + weights.b1.tobytes()
    body += weights.w2.tobytes() + weights.b2.tobytes()
    Path(path).write_bytes(body)


def load_fcn_weights(path) -> FcnWeights:
    data = Path(path).read_bytes()
    if len(data) < _FCN_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than .hfw header")
    magic, d_mid, d_out = _FCN_HEADER.unpack_from(data)
    if magic != FCN_MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {magic!r}")
    counts = (27 * d_mid, d_mid, 27 * d_mid * d_out, d_out)
    expected = _FCN_HEADER.size + 4 * sum(counts)
    if len(data) != expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f4", offset=_FCN_HEADER.size)
    pos = 0
    parts = []
    for count in counts:
        parts.append(flat[pos : pos + count])
        pos += count
    return FcnWeights(
        parts[0].reshape(27, 1, d_mid),
        parts[1],
        parts[2].reshape(27, d_mid, d_out),
        parts[3],
    )


@dataclass(frozen=True)
class FeaturizerSpec:
    kind: str = "identity"
    d_out: int = 1
    fcn_weights: FcnWeights | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown featurizer kind {self.kind!r}")
        if self.kind == "identity" and self.d_out != 1:
            raise ConfigurationError("identity featurizer has d_out = 1")
        if self.kind == "stats" and self.d_out != 5:
            raise ConfigurationError("stats featurizer has d_out = 5")
        if self.kind == "fcn":
            if self.fcn_weights is None:
                raise ConfigurationError("fcn featurizer requires weights")
            if self.fcn_weights.d_out != self.d_out:
                raise ConfigurationError(
                    f"fcn weights produce d_out={self.fcn_weights.d_out}, "
                    f"spec says {self.d_out}"
                )

    @staticmethod
    def identity() -> "FeaturizerSpec":
        return FeaturizerSpec(kind="identity", d_out=1)

    @staticmethod
    def stats() -> "FeaturizerSpec":
        return FeaturizerSpec(kind="stats", d_out=5)

    @staticmethod
    def fcn(weights: FcnWeights) -> "FeaturizerSpec":
        return FeaturizerSpec(kind="fcn", d_out=weights.d_out, fcn_weights=weights)


def featurize(
    cloud: PointCloud,
    spec: FeaturizerSpec,
    delta_m: float,
    backend: str | None = None,
) -> SparseFeatureGrid:
    """Quantize a dense cloud and emit the per-voxel features for ``spec``."""
    if cloud.n == 0:
        raise ValidationError("cannot featurize an empty cloud")
    # Quantize with the same f32-granular delta the grid will store.
    delta_m = float(np.float32(delta_m))
    q = quantize_points(cloud.points, delta_m)
    if spec.kind == "identity":
        uniq, _ = unique_voxels(q)
        return SparseFeatureGrid(uniq, np.ones((uniq.shape[0], 1), np.float32), delta_m)
    if spec.kind == "stats":
        return _featurize_stats(cloud.points, q, delta_m)
    return _featurize_fcn(q, spec.fcn_weights, delta_m, backend)


def _featurize_stats(points: np.ndarray, q: np.ndarray, delta_m: float) -> SparseFeatureGrid:
    uniq, inverse = unique_voxels(q)
    n_vox = uniq.shape[0]
    # Canonical point order (voxel, then coordinates) keeps the float64
    # offset sums independent of input permutation.
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0], inverse))
    inv_sorted = inverse[order]
    frac = points[order] / delta_m - q[order].astype(np.float64)
    starts = np.searchsorted(inv_sorted, np.arange(n_vox))
    counts = np.diff(np.append(starts, inv_sorted.shape[0]))
    sums = np.add.reduceat(frac, starts, axis=0)
    means = sums / counts[:, None]
    feats = np.empty((n_vox, 5), dtype=np.float64)
    feats[:, 0] = np.log2(1.0 + counts)
    feats[:, 1:4] = means
    feats[:, 4] = 1.0
    return SparseFeatureGrid(uniq, feats.astype(np.float32), delta_m)


def _conv_layer(
    grid: SparseFeatureGrid,
    weights: np.ndarray,
    bias: np.ndarray,
    relu: bool,
    backend: str | None,
) -> SparseFeatureGrid:
    """One sparse conv layer: output support = input support dilated by the
    kernel; bias applies on that support only; optional rectifier."""
    offsets = kernel_offsets(_FCN_KERNEL_SIZE)
    out_coords = dilate(grid.coords, offsets)
    out = conv_at(grid, out_coords, weights, offsets, backend=backend)
    out = out.astype(np.float64) + bias.astype(np.float64)[None, :]
    if relu:
        out = np.maximum(out, 0.0)
    # Grid construction drops rows that became exactly zero.
    return SparseFeatureGrid(out_coords, out.astype(np.float32), grid.delta_m)


def _featurize_fcn(
    q: np.ndarray, weights: FcnWeights, delta_m: float, backend: str | None
) -> SparseFeatureGrid:
    uniq, _ = unique_voxels(q)
    occ = SparseFeatureGrid(uniq, np.ones((uniq.shape[0], 1), np.float32), delta_m)
    hidden = _conv_layer(occ, weights.w1, weights.b1, relu=True, backend=backend)
    return _conv_layer(hidden, weights.w2, weights.b2, relu=False, backend=backend)
