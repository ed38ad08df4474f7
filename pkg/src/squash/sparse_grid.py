"""Sparse voxel container: integer-coordinate-indexed feature vectors.

A grid maps voxel coordinates (i, j, k) = (floor(x/d), floor(y/d),
floor(z/d)) at quantization d to fixed-width float32 feature vectors.
Entries are stored as parallel arrays sorted lexicographically by
coordinate, which makes equality, serialization, and merge-style
neighborhood matching canonical.

Point lookups and small fixed-offset neighborhoods are the query
workload, so the frozen grid carries a flat packed-key index (row-major
over the occupied bounding box) probed by binary search / merge join
rather than a tree. Grids are immutable after construction and safe to
share across threads.
"""
from __future__ import annotations

import numpy as np

from .errors import GridTooLargeError, ValidationError

# Serialization stores i32 coordinates; quantization rejects anything wider.
COORD_MIN = -(2**31)
COORD_MAX = 2**31 - 1

# Saturation bound applied before float->int casts so extreme (but finite)
# coordinates cannot wrap around.
_SAT = np.float64(2**40)

DENSE_VOLUME_CAP = 10_000_000


def quantize(p, delta_m: float) -> tuple[int, int, int]:
    """Voxel index of a single point: componentwise floor(p / delta)."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.shape != (3,):
        raise ValidationError(f"expected a 3-vector, got shape {p.shape}")
    if not np.isfinite(p).all():
        raise ValidationError("point must be finite")
    if not delta_m > 0:
        raise ValidationError("delta_m must be > 0")
    q = np.floor(p / delta_m)
    return (int(q[0]), int(q[1]), int(q[2]))


def quantize_points(points: np.ndarray, delta_m: float) -> np.ndarray:
    """Vectorized quantize: (n, 3) float64 -> (n, 3) int64.

    Out-of-range coordinates saturate (clamped well outside any storable
    grid) instead of wrapping; such voxels can never match a grid entry.
    """
    if not delta_m > 0:
        raise ValidationError("delta_m must be > 0")
    q = np.floor(np.asarray(points, dtype=np.float64) / delta_m)
    np.clip(q, -_SAT, _SAT, out=q)
    return q.astype(np.int64)


def _check_coord_range(coords: np.ndarray) -> None:
    if coords.size and (coords.min() < COORD_MIN or coords.max() > COORD_MAX):
        raise ValidationError("voxel coordinates exceed the supported +/-2^31 range")


def _pack_params(lo: np.ndarray, hi: np.ndarray):
    """Row-major packing strides over a bounding box, or None on overflow.

    Packing needs H*W*D to fit in int64; a grid spread so wide that it
    does not (hundreds of km in every axis at once) falls back to dict
    lookups.
    """
    extents = [int(h) - int(l) + 1 for l, h in zip(lo, hi)]
    volume = extents[0] * extents[1] * extents[2]
    if volume >= 2**62:
        return None
    return np.int64(extents[1] * extents[2]), np.int64(extents[2])


def pack_keys(coords: np.ndarray, lo: np.ndarray, s0: np.int64, s1: np.int64) -> np.ndarray:
    """Row-major keys for in-box coords; monotone in lexicographic order."""
    rel = coords - lo[None, :]
    return rel[:, 0] * s0 + rel[:, 1] * s1 + rel[:, 2]


class SparseFeatureGrid:
    """Immutable map from voxel coordinates to d-wide float32 features.

    Exact-zero feature vectors are not stored: occupied <=> stored. The
    constructor canonicalizes (sorts, validates, drops zero vectors) and
    freezes the result.
    """

    __slots__ = (
        "delta_m", "coords", "feats",
        "_lo", "_hi", "_s0", "_s1", "_keys", "_map", "_hash",
    )

    def __init__(self, coords, feats, delta_m: float):
        if not delta_m > 0:
            raise ValidationError("delta_m must be > 0")
        # Serialization carries f32 delta; normalizing here keeps a stored
        # grid's quantization identical to the in-memory one.
        delta_m = float(np.float32(delta_m))
        coords = np.ascontiguousarray(np.asarray(coords, dtype=np.int64))
        feats = np.ascontiguousarray(np.asarray(feats, dtype=np.float32))
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValidationError(f"coords must be (n, 3), got {coords.shape}")
        if feats.ndim != 2 or feats.shape[0] != coords.shape[0]:
            raise ValidationError(
                f"feats must be (n, d) with n={coords.shape[0]}, got {feats.shape}"
            )
        if feats.shape[1] < 1:
            raise ValidationError("feature width d must be >= 1")
        if feats.size and not np.isfinite(feats).all():
            raise ValidationError("features must be finite")
        _check_coord_range(coords)

        # Drop exact-zero vectors, then canonicalize to lexicographic order.
        keep = np.any(feats != 0.0, axis=1)
        coords = coords[keep]
        feats = feats[keep]
        order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
        coords = coords[order]
        feats = feats[order]
        if coords.shape[0] > 1 and np.any(np.all(np.diff(coords, axis=0) == 0, axis=1)):
            raise ValidationError("duplicate voxel coordinates")

        coords.flags.writeable = False
        feats.flags.writeable = False
        self.delta_m = float(delta_m)
        self.coords = coords
        self.feats = feats
        self._map = None
        self._hash = None
        if coords.shape[0] == 0:
            self._lo = np.zeros(3, dtype=np.int64)
            self._hi = np.full(3, -1, dtype=np.int64)
            self._s0 = self._s1 = np.int64(1)
            self._keys = np.zeros(0, dtype=np.int64)
            return
        self._lo = coords.min(axis=0)
        self._hi = coords.max(axis=0)
        params = _pack_params(self._lo, self._hi)
        if params is None:
            self._s0 = self._s1 = None
            self._keys = None  # dict fallback built lazily by _coord_map
        else:
            self._s0, self._s1 = params
            self._keys = pack_keys(coords, self._lo, self._s0, self._s1)
            self._keys.flags.writeable = False

    # -- basic introspection ------------------------------------------------

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.feats.shape[1]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Occupied bounding box (lo, hi), inclusive. Metadata only."""
        return self._lo.copy(), self._hi.copy()

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseFeatureGrid):
            return NotImplemented
        return (
            self.delta_m == other.delta_m
            and self.coords.shape == other.coords.shape
            and self.feats.shape == other.feats.shape
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.feats, other.feats)
        )

    def __repr__(self) -> str:
        return f"SparseFeatureGrid(n={self.n}, d={self.d}, delta_m={self.delta_m})"

    # -- lookups --------------------------------------------------------------

    def _coord_map(self) -> dict:
        if self._map is None:
            self._map = {
                (int(c[0]), int(c[1]), int(c[2])): i for i, c in enumerate(self.coords)
            }
        return self._map

    def _lookup_index(self):
        """Lazy key -> row index for the jit kernels.

        Compact bounding boxes get a direct-address int32 table (one load
        per probe, cache-resident); wide boxes get an open-addressing hash
        table. Rebuilding on a benign race yields an identical structure,
        so no lock is needed for concurrent readers.
        """
        if self._keys is None:
            raise GridTooLargeError("grid bounding box is too wide for packed lookups")
        if self._hash is None:
            extents = self._hi - self._lo + 1
            volume = int(extents[0]) * int(extents[1]) * int(extents[2])
            if volume <= max(64 * self.n, 4096) and volume <= 16_777_216:
                rowmap = np.full(volume, -1, dtype=np.int32)
                rowmap[self._keys] = np.arange(self.n, dtype=np.int32)
                self._hash = ("direct", rowmap)
            else:
                from ._kernels import build_hash_table

                self._hash = ("hash", build_hash_table(self._keys))
        return self._hash

    def lookup_rows(self, coords: np.ndarray) -> np.ndarray:
        """Row index per query coord, -1 where absent."""
        coords = np.asarray(coords, dtype=np.int64)
        m = coords.shape[0]
        rows = np.full(m, -1, dtype=np.int64)
        if self.n == 0 or m == 0:
            return rows
        inside = np.all((coords >= self._lo) & (coords <= self._hi), axis=1)
        if self._keys is None:
            cmap = self._coord_map()
            for i in np.flatnonzero(inside):
                rows[i] = cmap.get((int(coords[i, 0]), int(coords[i, 1]), int(coords[i, 2])), -1)
            return rows
        keys = pack_keys(coords[inside], self._lo, self._s0, self._s1)
        pos = np.searchsorted(self._keys, keys)
        pos_c = np.minimum(pos, self.n - 1)
        hit = self._keys[pos_c] == keys
        found = np.where(hit, pos_c, -1)
        rows[np.flatnonzero(inside)] = found
        return rows

    def match_shifted(self, out_coords: np.ndarray, offset: np.ndarray):
        """Match out_coords + offset against stored entries.

        Returns (out_idx, grid_rows): positions in out_coords whose shifted
        coordinate is occupied, in ascending out_coords order, and the
        corresponding grid rows.
        """
        rows = self.lookup_rows(out_coords + offset[None, :])
        out_idx = np.flatnonzero(rows >= 0)
        return out_idx, rows[out_idx]

    # -- dense conversion (test oracle for small instances) -------------------

    def to_dense(self, cap: int = DENSE_VOLUME_CAP) -> tuple[np.ndarray, np.ndarray]:
        """Dense (H, W, D, d) float32 array over the occupied bounding box,
        plus the box origin. Refuses boxes above ``cap`` voxels."""
        if self.n == 0:
            raise ValidationError("cannot densify an empty grid")
        extents = (self._hi - self._lo + 1).astype(object)
        volume = int(extents[0]) * int(extents[1]) * int(extents[2])
        if volume > cap:
            raise GridTooLargeError(f"bounding box holds {volume} voxels (cap {cap})")
        dense = np.zeros((int(extents[0]), int(extents[1]), int(extents[2]), self.d), np.float32)
        rel = self.coords - self._lo[None, :]
        dense[rel[:, 0], rel[:, 1], rel[:, 2]] = self.feats
        return dense, self._lo.copy()

    @staticmethod
    def from_dense(dense: np.ndarray, origin, delta_m: float) -> "SparseFeatureGrid":
        """Re-sparsify a dense block; exact-zero vectors are dropped."""
        dense = np.asarray(dense, dtype=np.float32)
        if dense.ndim != 4:
            raise ValidationError(f"dense block must be 4D, got {dense.shape}")
        origin = np.asarray(origin, dtype=np.int64).reshape(3)
        occ = np.any(dense != 0.0, axis=3)
        idx = np.argwhere(occ).astype(np.int64)
        return SparseFeatureGrid(idx + origin[None, :], dense[occ], delta_m)


def unique_voxels(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicate (n, 3) int64 voxel coords.

    Returns (unique coords sorted lexicographically, inverse map). Uses
    packed int64 keys when the span permits, else np.unique rows.
    """
    coords = np.asarray(coords, dtype=np.int64)
    if coords.shape[0] == 0:
        return coords.reshape(0, 3), np.zeros(0, dtype=np.int64)
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    params = _pack_params(lo, hi)
    if params is None:
        uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1).astype(np.int64)
    s0, s1 = params
    keys = pack_keys(coords, lo, s0, s1)
    uniq_keys, inverse = np.unique(keys, return_inverse=True)
    i = uniq_keys // s0
    rem = uniq_keys - i * s0
    j = rem // s1
    k = rem - j * s1
    uniq = np.stack([i, j, k], axis=1) + lo[None, :]
    return uniq, inverse.reshape(-1).astype(np.int64)


def dilate(coords: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Unique coords + offsets (the output support of a sparse convolution)."""
    coords = np.asarray(coords, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    shifted = (coords[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    uniq, _ = unique_voxels(shifted)
    return uniq


def kernel_offsets(k: int) -> np.ndarray:
    """Lexicographic offsets (-r..r)^3 for an odd kernel size k, (k^3, 3)."""
    if k < 1 or k % 2 == 0:
        raise ValidationError("kernel size must be odd and >= 1")
    r = (k - 1) // 2
    axis = np.arange(-r, r + 1, dtype=np.int64)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3)
