"""Hot-path kernels for sparse neighborhood convolution.

Two interchangeable backends compute the gather-accumulate at the heart
of the query path:

* ``numba``: JIT-compiled voxel-centric kernels probing a direct-address
  row table (compact bounding boxes) or an open-addressing hash table.
* ``numpy``: vectorized searchsorted matching plus broadcast accumulation.

The default is picked by the ``SQUASH_BACKEND`` environment variable
("auto", "numba", or "numpy"; "auto" uses numba when importable). Both
backends are required to produce bit-identical float32 results: every
output element accumulates ``theta[o, ci, :] * feature[ci]`` in float64,
in lexicographic offset order then channel order, and is cast to float32
once at the end. Keep that order; do not introduce FMA, fastmath,
or reduction reordering in either path.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import ConfigurationError

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

BACKENDS = ("numba", "numpy")

# Fibonacci hashing constant (golden-ratio multiplier for 64-bit keys).
_HASH_MULT = np.uint64(0x9E3779B97F4A7C15)


def hash_capacity(n: int) -> tuple[int, int, int]:
    """Open-addressing table size for n keys: power of two, load <= 0.5.

    Returns (capacity, shift, mask) for Fibonacci hashing:
    slot = (key * MULT) >> shift, probed linearly under mask.
    """
    bits = max(3, (max(n, 1) * 2 - 1).bit_length())
    cap = 1 << bits
    return cap, 64 - bits, cap - 1


def default_backend() -> str:
    """Backend selected by SQUASH_BACKEND (auto|numba|numpy), default auto."""
    choice = os.environ.get("SQUASH_BACKEND", "auto").strip().lower()
    if choice in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if choice not in BACKENDS:
        raise ConfigurationError(
            f"SQUASH_BACKEND must be auto, numba, or numpy; got {choice!r}"
        )
    if choice == "numba" and not HAVE_NUMBA:
        raise ConfigurationError("SQUASH_BACKEND=numba but numba is not importable")
    return choice


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    backend = backend.lower()
    if backend == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if backend not in BACKENDS:
        raise ConfigurationError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise ConfigurationError("numba backend requested but numba is not importable")
    return backend


@njit(cache=True)
def _hash_build_nb(keys, table_keys, table_rows, shift, mask):
    """Insert packed keys (all >= 0; -1 marks empty slots), linear probing."""
    for i in range(keys.shape[0]):
        key = keys[i]
        slot = np.int64((np.uint64(key) * _HASH_MULT) >> np.uint64(shift))
        while table_keys[slot] != -1:
            slot = (slot + 1) & mask
        table_keys[slot] = key
        table_rows[slot] = i


@njit(cache=True)
def _conv_hash_nb(
    table_keys, table_rows, shift, mask,
    g_feats, g_lo, g_hi, s0, s1,
    u_coords, offsets, th64, radius, out32,
):
    """Voxel-centric lazy convolution probing an open-addressing table.

    Per query voxel, every offset is probed and accumulated into a local
    float64 buffer written out once as float32; offset-major accumulation
    would rewrite each output row k^3 times. Per output element the order
    is offsets (lexicographic) then input channel — keep it in sync with
    the numpy path and the direct-address kernel.
    """
    n_u = u_coords.shape[0]
    k3 = offsets.shape[0]
    din = g_feats.shape[1]
    dout = out32.shape[1]
    acc = np.empty(dout, np.float64)
    for ui in range(n_u):
        for co in range(dout):
            acc[co] = 0.0
        bi = u_coords[ui, 0]
        bj = u_coords[ui, 1]
        bk = u_coords[ui, 2]
        if (
            bi + radius < g_lo[0] or bi - radius > g_hi[0]
            or bj + radius < g_lo[1] or bj - radius > g_hi[1]
            or bk + radius < g_lo[2] or bk - radius > g_hi[2]
        ):
            for co in range(dout):
                out32[ui, co] = np.float32(0.0)
            continue
        for o in range(k3):
            ci_ = bi + offsets[o, 0]
            cj = bj + offsets[o, 1]
            ck = bk + offsets[o, 2]
            if (
                ci_ < g_lo[0] or ci_ > g_hi[0]
                or cj < g_lo[1] or cj > g_hi[1]
                or ck < g_lo[2] or ck > g_hi[2]
            ):
                continue
            key = (ci_ - g_lo[0]) * s0 + (cj - g_lo[1]) * s1 + (ck - g_lo[2])
            slot = np.int64((np.uint64(key) * _HASH_MULT) >> np.uint64(shift))
            row = np.int64(-1)
            while True:
                stored = table_keys[slot]
                if stored == key:
                    row = table_rows[slot]
                    break
                if stored == -1:
                    break
                slot = (slot + 1) & mask
            if row >= 0:
                for ci in range(din):
                    v = np.float64(g_feats[row, ci])
                    for co in range(dout):
                        acc[co] += th64[o, ci, co] * v
        for co in range(dout):
            out32[ui, co] = np.float32(acc[co])


@njit(cache=True)
def _conv_direct_span_nb(rowmap, g_feats, g_lo, g_hi, s0, s1, u_coords, k, th64, out32):
    """Direct-address kernel specialized to a full cubic k x k x k stencil.

    The stencil's innermost axis maps to consecutive rowmap entries, so
    each (di, dj) pair probes one contiguous span of k slots instead of k
    scattered loads. The offset index o = dij * k + dk keeps the
    accumulation order identical to the generic kernels.
    """
    n_u = u_coords.shape[0]
    din = g_feats.shape[1]
    dout = out32.shape[1]
    r = (k - 1) // 2
    acc = np.empty(dout, np.float64)
    for ui in range(n_u):
        for co in range(dout):
            acc[co] = 0.0
        bi = u_coords[ui, 0]
        bj = u_coords[ui, 1]
        bk = u_coords[ui, 2]
        if (
            bi + r < g_lo[0] or bi - r > g_hi[0]
            or bj + r < g_lo[1] or bj - r > g_hi[1]
            or bk + r < g_lo[2] or bk - r > g_hi[2]
        ):
            for co in range(dout):
                out32[ui, co] = np.float32(0.0)
            continue
        k_lo = bk - r
        k_hi = bk + r
        if k_lo < g_lo[2]:
            k_lo = g_lo[2]
        if k_hi > g_hi[2]:
            k_hi = g_hi[2]
        dij = -1
        for di in range(-r, r + 1):
            ci_ = bi + di
            for dj in range(-r, r + 1):
                dij += 1
                if ci_ < g_lo[0] or ci_ > g_hi[0]:
                    continue
                cj = bj + dj
                if cj < g_lo[1] or cj > g_hi[1]:
                    continue
                base = (ci_ - g_lo[0]) * s0 + (cj - g_lo[1]) * s1 - g_lo[2]
                for ck in range(k_lo, k_hi + 1):
                    row = rowmap[base + ck]
                    if row >= 0:
                        o = dij * k + (ck - (bk - r))
                        for ci in range(din):
                            v = np.float64(g_feats[row, ci])
                            for co in range(dout):
                                acc[co] += th64[o, ci, co] * v
        for co in range(dout):
            out32[ui, co] = np.float32(acc[co])


@njit(cache=True)
def _conv_direct_nb(rowmap, g_feats, g_lo, g_hi, s0, s1, u_coords, offsets, th64, radius, out32):
    """Like _conv_hash_nb but with a direct-address key -> row table, used
    when the occupied bounding box is compact enough for the table to stay
    cache-resident. One load per probe, no probe chain."""
    n_u = u_coords.shape[0]
    k3 = offsets.shape[0]
    din = g_feats.shape[1]
    dout = out32.shape[1]
    acc = np.empty(dout, np.float64)
    for ui in range(n_u):
        for co in range(dout):
            acc[co] = 0.0
        bi = u_coords[ui, 0]
        bj = u_coords[ui, 1]
        bk = u_coords[ui, 2]
        if (
            bi + radius < g_lo[0] or bi - radius > g_hi[0]
            or bj + radius < g_lo[1] or bj - radius > g_hi[1]
            or bk + radius < g_lo[2] or bk - radius > g_hi[2]
        ):
            for co in range(dout):
                out32[ui, co] = np.float32(0.0)
            continue
        for o in range(k3):
            ci_ = bi + offsets[o, 0]
            cj = bj + offsets[o, 1]
            ck = bk + offsets[o, 2]
            if (
                ci_ < g_lo[0] or ci_ > g_hi[0]
                or cj < g_lo[1] or cj > g_hi[1]
                or ck < g_lo[2] or ck > g_hi[2]
            ):
                continue
            row = rowmap[(ci_ - g_lo[0]) * s0 + (cj - g_lo[1]) * s1 + (ck - g_lo[2])]
            if row >= 0:
                for ci in range(din):
                    v = np.float64(g_feats[row, ci])
                    for co in range(dout):
                        acc[co] += th64[o, ci, co] * v
        for co in range(dout):
            out32[ui, co] = np.float32(acc[co])


def _is_cubic_stencil(offsets: np.ndarray) -> bool:
    """True when offsets are exactly the lexicographic (-r..r)^3 cube."""
    k3 = offsets.shape[0]
    k = round(k3 ** (1.0 / 3.0))
    if k**3 != k3 or k % 2 == 0:
        return False
    r = (k - 1) // 2
    axis = np.arange(-r, r + 1, dtype=np.int64)
    expected = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    return bool(np.array_equal(offsets, expected))


def _conv_numpy(grid, out_coords, offsets, th64, acc):
    din = grid.d
    for o in range(offsets.shape[0]):
        out_idx, rows = grid.match_shifted(out_coords, offsets[o])
        if out_idx.size == 0:
            continue
        f64 = grid.feats[rows].astype(np.float64)
        for ci in range(din):
            acc[out_idx] += f64[:, ci, None] * th64[o, ci][None, :]


def build_hash_table(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Open-addressing table over non-negative int64 keys.

    Returns (table_keys, table_rows, shift, mask); empty slots hold -1.
    """
    cap, shift, mask = hash_capacity(keys.shape[0])
    table_keys = np.full(cap, -1, dtype=np.int64)
    table_rows = np.full(cap, -1, dtype=np.int64)
    if keys.shape[0]:
        _hash_build_nb(keys, table_keys, table_rows, np.int64(shift), np.int64(mask))
    return table_keys, table_rows, shift, mask


def conv_at(grid, out_coords, weights, offsets, backend: str | None = None) -> np.ndarray:
    """Sparse convolution evaluated only at the given output coordinates.

    out[u] = sum over offsets o of weights[o].T @ grid[out_coords[u] + o],
    with missing voxels contributing zero.

    out_coords: (U, 3) int64, lexicographically sorted, unique.
    weights: (k^3, d_in, d_out) float32, offset-major lexicographic.
    Returns (U, d_out) float32; both backends agree bit-for-bit.
    """
    backend = resolve_backend(backend)
    out_coords = np.ascontiguousarray(out_coords, dtype=np.int64)
    n_u = out_coords.shape[0]
    k3, din, dout = weights.shape
    if din != grid.d:
        raise ConfigurationError(f"kernel d_in={din} but grid d={grid.d}")
    if offsets.shape != (k3, 3):
        raise ConfigurationError("offsets must be (k^3, 3) matching the weights")
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    th64 = weights.astype(np.float64)
    if n_u == 0 or grid.n == 0:
        return np.zeros((n_u, dout), dtype=np.float32)
    # The jit kernels need packed keys; grids spread too wide for packing
    # take the vectorized path regardless of backend.
    if backend == "numba" and HAVE_NUMBA and grid._keys is not None:
        out32 = np.empty((n_u, dout), dtype=np.float32)
        radius = np.int64(np.abs(offsets).max()) if k3 else np.int64(0)
        kind, index = grid._lookup_index()
        if kind == "direct" and _is_cubic_stencil(offsets):
            k = round(k3 ** (1.0 / 3.0))
            _conv_direct_span_nb(
                index,
                grid.feats, grid._lo, grid._hi, grid._s0, grid._s1,
                out_coords, np.int64(k), th64, out32,
            )
        elif kind == "direct":
            _conv_direct_nb(
                index,
                grid.feats, grid._lo, grid._hi, grid._s0, grid._s1,
                out_coords, offsets, th64, radius, out32,
            )
        else:
            table_keys, table_rows, shift, mask = index
            _conv_hash_nb(
                table_keys, table_rows, np.int64(shift), np.int64(mask),
                grid.feats, grid._lo, grid._hi, grid._s0, grid._s1,
                out_coords, offsets, th64, radius, out32,
            )
        return out32
    acc = np.zeros((n_u, dout), dtype=np.float64)
    _conv_numpy(grid, out_coords, offsets, th64, acc)
    return acc.astype(np.float32)
