"""The low-latency runtime path: per-point history features via a lazy
sparse K x K x K convolution over an anchor record.

For a scan point p, the history vector is

    f(p) = sum over offsets o of theta[o].T @ Q[quantize(p, delta) + o]

with missing voxels contributing zero — the convolution theta * Q
evaluated only at the voxels the scan actually touches. The dilated
output support of a K=5 convolution is up to 125x the input support,
while a scan touches far fewer distinct voxels, so the full convolved
tensor is never materialized; a per-scan voxel memo (deduplicated scan
voxels) avoids recomputing points that share a voxel. That lazy
evaluation is the performance decision this module exists for, and what
the latency probe measures.
"""
from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import conv_at, resolve_backend
from .builder import SquashRecord
from .errors import (
    ConfigurationError,
    MagicMismatchError,
    TruncatedFileError,
    ValidationError,
)
from .pointcloud import PointCloud
from .sparse_grid import kernel_offsets, quantize_points, unique_voxels

HQK_MAGIC = b"HQK1"
_HQK_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class QueryKernel:
    """K x K x K filter mapping d_in grid channels to d_out history channels.

    Weights are offset-major: shape (k^3, d_in, d_out), offsets in
    lexicographic order from (-(k-1)/2, ...).
    """

    k: int
    weights: np.ndarray

    def __init__(self, k: int, weights):
        if k < 1 or k % 2 == 0:
            raise ConfigurationError("kernel size k must be odd and >= 1")
        w = np.ascontiguousarray(np.asarray(weights, dtype=np.float32))
        if w.ndim != 3 or w.shape[0] != k**3:
            raise ConfigurationError(
                f"weights must be (k^3, d_in, d_out) = ({k ** 3}, ...), got {w.shape}"
            )
        if not np.isfinite(w).all():
            raise ConfigurationError("kernel weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "k", int(k))
        object.__setattr__(self, "weights", w)

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[2]

    def offsets(self) -> np.ndarray:
        return kernel_offsets(self.k)


def averaging_kernel(k: int, d: int) -> QueryKernel:
    """Channel-preserving neighborhood average: theta[o] = I_d / k^3.

    The documented default for the ephemerality benchmark; with an
    occupancy grid (d=1) the history value is the fraction of occupied
    voxels in the K-neighborhood.
    """
    w = np.zeros((k**3, d, d), dtype=np.float32)
    w[:, np.arange(d), np.arange(d)] = np.float32(1.0 / k**3)
    return QueryKernel(k, w)


def random_kernel(k: int, d_in: int, d_out: int, seed: int = 0) -> QueryKernel:
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((k**3, d_in, d_out)) / np.sqrt(k**3 * d_in)
    return QueryKernel(k, w.astype(np.float32))


def save_kernel(kernel: QueryKernel, path) -> None:
    body = _HQK_HEADER.pack(HQK_MAGIC, kernel.k, kernel.d_in, kernel.d_out)
    Path(path).write_bytes(body + kernel.weights.tobytes())


def load_kernel(path) -> QueryKernel:
    data = Path(path).read_bytes()
    if len(data) < _HQK_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than .hqk header")
    magic, k, d_in, d_out = _HQK_HEADER.unpack_from(data)
    if magic != HQK_MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {magic!r}")
    expected = _HQK_HEADER.size + 4 * k**3 * d_in * d_out
    if len(data) != expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f4", offset=_HQK_HEADER.size)
    return QueryKernel(k, flat.reshape(k**3, d_in, d_out))


@dataclass(frozen=True)
class EndowedPointCloud:
    """The live scan plus d_history extra channels per point."""

    points: np.ndarray
    base_channels: np.ndarray
    history: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        base = np.asarray(self.base_channels, dtype=np.float32)
        hist = np.ascontiguousarray(np.asarray(self.history, dtype=np.float32))
        if not (pts.shape[0] == base.shape[0] == hist.shape[0]):
            raise ValidationError("points, base_channels, history row counts differ")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "base_channels", base)
        object.__setattr__(self, "history", hist)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d_history(self) -> int:
        return self.history.shape[1]

    def as_cloud(self) -> PointCloud:
        """Flatten to a PointCloud with history appended after the base
        channels (the .hpc layout written by the CLI)."""
        return PointCloud(
            self.points, np.concatenate([self.base_channels, self.history], axis=1)
        )


def query(
    scan: PointCloud,
    record: SquashRecord,
    kernel: QueryKernel,
    backend: str | None = None,
) -> EndowedPointCloud:
    """Endow a global-frame scan with history features from a record.

    Points sharing a voxel receive identical vectors; an empty grid (or a
    scan far from any occupancy) yields all-zero history.
    """
    grid = record.grid
    if kernel.d_in != grid.d:
        raise ConfigurationError(
            f"kernel d_in={kernel.d_in} does not match record grid d={grid.d}"
        )
    voxels = quantize_points(scan.points, grid.delta_m)
    uniq, inverse = unique_voxels(voxels)
    per_voxel = conv_at(grid, uniq, kernel.weights, kernel.offsets(), backend=backend)
    history = per_voxel[inverse] if uniq.shape[0] else np.zeros((0, kernel.d_out), np.float32)
    return EndowedPointCloud(scan.points, scan.channels, history)


def query_latency_probe(
    scan_sizes: list[int],
    record: SquashRecord,
    kernel: QueryKernel,
    repetitions: int = 10,
    seed: int = 0,
    backend: str | None = None,
) -> list[dict]:
    """Wall-time statistics for queries of synthetic scans of given sizes.

    Scan points are drawn uniformly over the record's occupied bounding
    box. One warm-up run per size is excluded from the statistics (it
    also absorbs JIT compilation on the numba backend).
    """
    backend = resolve_backend(backend)
    grid = record.grid
    if grid.n:
        lo, hi = grid.bbox
        lo_m = lo.astype(np.float64) * grid.delta_m
        hi_m = (hi + 1).astype(np.float64) * grid.delta_m
    else:
        lo_m = np.zeros(3)
        hi_m = np.ones(3)
    rng = np.random.default_rng(seed)
    results = []
    for size in scan_sizes:
        pts = rng.uniform(lo_m, hi_m, size=(size, 3))
        scan = PointCloud(pts)
        query(scan, record, kernel, backend=backend)  # warm cache, excluded
        times = np.empty(repetitions)
        for rep in range(repetitions):
            t0 = time.perf_counter()
            query(scan, record, kernel, backend=backend)
            times[rep] = time.perf_counter() - t0
        results.append(
            {
                "n_points": int(size),
                "n_voxels": grid.n,
                "delta_m": grid.delta_m,
                "backend": backend,
                "repetitions": int(repetitions),
                "mean_ms": float(times.mean() * 1e3),
                "median_ms": float(np.median(times) * 1e3),
                "p99_ms": float(np.percentile(times, 99) * 1e3),
            }
        )
    return results
