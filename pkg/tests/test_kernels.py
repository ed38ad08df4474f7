"""Backend machinery: env-flag selection and numba/numpy bit-equality."""
import numpy as np
import pytest

from conftest import random_grid
from squash import ConfigurationError
from squash._kernels import (
    HAVE_NUMBA,
    build_hash_table,
    conv_at,
    default_backend,
    hash_capacity,
    resolve_backend,
)
from squash.sparse_grid import SparseFeatureGrid, kernel_offsets


def test_default_backend_env(monkeypatch):
    monkeypatch.setenv("SQUASH_BACKEND", "numpy")
    assert default_backend() == "numpy"
    monkeypatch.setenv("SQUASH_BACKEND", "auto")
    assert default_backend() == ("numba" if HAVE_NUMBA else "numpy")
    monkeypatch.setenv("SQUASH_BACKEND", "gpu")
    with pytest.raises(ConfigurationError):
        default_backend()


def test_resolve_backend():
    assert resolve_backend("numpy") == "numpy"
    with pytest.raises(ConfigurationError):
        resolve_backend("cuda")


def test_hash_capacity_load_factor():
    for n in (0, 1, 7, 8, 1000):
        cap, shift, mask = hash_capacity(n)
        assert cap >= 2 * max(n, 1)
        assert cap == mask + 1
        assert 1 << (64 - shift) == cap


def test_hash_table_finds_all_keys(rng):
    keys = np.unique(rng.integers(0, 2**40, size=500))
    tk, tr, shift, mask = build_hash_table(keys)
    for i, key in enumerate(keys):
        # Same Fibonacci hash, in Python ints to avoid overflow warnings.
        slot = ((int(key) * 0x9E3779B97F4A7C15) % 2**64) >> shift
        while tk[slot] != key:
            assert tk[slot] != -1
            slot = (slot + 1) & mask
        assert tr[slot] == i


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
@pytest.mark.parametrize("d_in,d_out,k", [(1, 1, 3), (1, 8, 5), (4, 4, 3), (5, 16, 5)])
def test_backends_bit_identical(rng, d_in, d_out, k):
    grid = random_grid(rng, n=300, d=d_in, span=14)
    offsets = kernel_offsets(k)
    weights = rng.standard_normal((k**3, d_in, d_out)).astype(np.float32)
    out_coords = np.unique(rng.integers(-25, 25, size=(400, 3)), axis=0)
    a = conv_at(grid, out_coords, weights, offsets, backend="numba")
    b = conv_at(grid, out_coords, weights, offsets, backend="numpy")
    assert np.array_equal(a.view(np.uint32), b.view(np.uint32))


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
def test_backends_bit_identical_hash_tier(rng):
    # A sparse grid spread wide enough that the direct-address table is
    # skipped in favor of open addressing.
    coords = rng.integers(-50_000, 50_000, size=(300, 3))
    coords = np.unique(coords, axis=0)
    grid = SparseFeatureGrid(coords, rng.standard_normal((coords.shape[0], 2)).astype(np.float32), 0.3)
    assert grid._lookup_index()[0] == "hash"
    offsets = kernel_offsets(3)
    weights = rng.standard_normal((27, 2, 4)).astype(np.float32)
    out_coords = np.unique(
        np.concatenate([coords[:100], rng.integers(-50_000, 50_000, size=(200, 3))]), axis=0
    )
    a = conv_at(grid, out_coords, weights, offsets, backend="numba")
    b = conv_at(grid, out_coords, weights, offsets, backend="numpy")
    assert np.array_equal(a.view(np.uint32), b.view(np.uint32))


def test_conv_at_rejects_width_mismatch(rng):
    grid = random_grid(rng, n=10, d=2)
    weights = np.zeros((27, 3, 4), dtype=np.float32)
    with pytest.raises(ConfigurationError):
        conv_at(grid, grid.coords, weights, kernel_offsets(3), backend="numpy")


def test_conv_at_empty_inputs(rng):
    grid = random_grid(rng, n=10, d=1)
    offsets = kernel_offsets(3)
    weights = np.ones((27, 1, 2), dtype=np.float32)
    out = conv_at(grid, np.zeros((0, 3), np.int64), weights, offsets, backend="numpy")
    assert out.shape == (0, 2)
    empty = SparseFeatureGrid(np.zeros((0, 3)), np.zeros((0, 1)), 0.3)
    out = conv_at(empty, np.array([[0, 0, 0]]), weights, offsets, backend="numpy")
    assert np.array_equal(out, np.zeros((1, 2), np.float32))
