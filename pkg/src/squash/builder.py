"""Aggregation of per-traversal grids into per-anchor records, and the
offline build that produces one record per anchor location.

Per anchor, the most recent covering traversals (at most t_max, recency
from manifest timestamps, ties by manifest order) are densified and
featurized independently, then reduced voxel-wise — max by default, which
is commutative, associative, and idempotent, so the result is independent
of traversal ordering.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyBuildError, EmptySelectionError, ValidationError
from .featurizer import FeaturizerSpec, featurize
from .scan_model import BuildConfig, Traversal, anchor_locations, combine_dense
from .sparse_grid import SparseFeatureGrid, unique_voxels

AGG_MODES = ("max", "mean")


@dataclass(frozen=True)
class Anchor:
    """A location along the route: arclength plus its global reference position."""

    arclength_m: float
    position: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.position, dtype=np.float64)).reshape(3)
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class SquashRecord:
    """A frozen feature grid tagged with its anchor; the unit of geo-indexed
    storage."""

    anchor_position: np.ndarray
    anchor_arclength: float
    grid: SparseFeatureGrid
    t_used: int
    cfg_fingerprint: int

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.anchor_position, dtype=np.float64)).reshape(3)
        pos.flags.writeable = False
        object.__setattr__(self, "anchor_position", pos)
        object.__setattr__(self, "anchor_arclength", float(self.anchor_arclength))
        if self.t_used < 1:
            raise ValidationError("t_used must be >= 1")
        if not 0 <= self.cfg_fingerprint < 2**64:
            raise ValidationError("cfg_fingerprint must fit in u64")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SquashRecord):
            return NotImplemented
        return (
            np.array_equal(self.anchor_position, other.anchor_position)
            and self.anchor_arclength == other.anchor_arclength
            and self.t_used == other.t_used
            and self.cfg_fingerprint == other.cfg_fingerprint
            and self.grid == other.grid
        )


def config_fingerprint(cfg: BuildConfig, spec: FeaturizerSpec) -> int:
    """Stable u64 digest of the build config + featurizer identity.

    Hash-stable across processes (unlike hash()); weight bytes are folded
    in so records built with different FCN weights never alias.
    """
    payload = {
        "h_start_m": cfg.h_start_m,
        "h_end_m": cfg.h_end_m,
        "frame_stride_m": cfg.frame_stride_m,
        "anchor_spacing_m": cfg.anchor_spacing_m,
        "t_max": cfg.t_max,
        "delta_m": cfg.delta_m,
        "kernel_size": cfg.kernel_size,
        "d_history": cfg.d_history,
        "featurizer": spec.kind,
        "d_out": spec.d_out,
    }
    h = hashlib.sha256(json.dumps(payload, sort_keys=True).encode())
    if spec.fcn_weights is not None:
        w = spec.fcn_weights
        for arr in (w.w1, w.b1, w.w2, w.b2):
            h.update(arr.tobytes())
    return int.from_bytes(h.digest()[:8], "big")


def aggregate(grids: list[SparseFeatureGrid], mode: str = "max") -> SparseFeatureGrid:
    """Voxel-wise reduction of grids sharing delta and width.

    Output support is the union of input supports. ``max`` takes the
    componentwise maximum of the vectors present at a voxel; ``mean``
    averages over the grids occupying that voxel (not over all grids),
    which keeps the support equal to the union.
    """
    if not grids:
        raise ValidationError("aggregate needs at least one grid")
    if mode not in AGG_MODES:
        raise ConfigurationError(f"unknown aggregation mode {mode!r}")
    delta = grids[0].delta_m
    d = grids[0].d
    for g in grids[1:]:
        if g.delta_m != delta:
            raise ConfigurationError(f"mixed delta_m: {g.delta_m} != {delta}")
        if g.d != d:
            raise ConfigurationError(f"mixed feature widths: {g.d} != {d}")
    coords = np.concatenate([g.coords for g in grids], axis=0)
    feats = np.concatenate([g.feats for g in grids], axis=0)
    uniq, inverse = unique_voxels(coords)
    n = uniq.shape[0]
    if mode == "max":
        out = np.full((n, d), -np.inf, dtype=np.float32)
        np.maximum.at(out, inverse, feats)
    else:
        sums = np.zeros((n, d), dtype=np.float64)
        np.add.at(sums, inverse, feats.astype(np.float64))
        counts = np.bincount(inverse, minlength=n).astype(np.float64)
        out = (sums / counts[:, None]).astype(np.float32)
    return SparseFeatureGrid(uniq, out, delta)


def _nearest_frame(traversal: Traversal, position: np.ndarray) -> tuple[int, float]:
    deltas = traversal.positions() - position[None, :]
    d2 = np.einsum("ij,ij->i", deltas, deltas)
    idx = int(np.argmin(d2))
    return idx, float(np.sqrt(d2[idx]))


def _most_recent_first(traversals: list[Traversal]) -> list[Traversal]:
    # Stable sort keeps manifest order among equal timestamps.
    return sorted(traversals, key=lambda t: -t.timestamp)


def build_squash(
    traversals: list[Traversal],
    anchor: Anchor,
    cfg: BuildConfig,
    spec: FeaturizerSpec,
    *,
    agg_mode: str = "max",
    coverage_radius_m: float | None = None,
    grid_cache: dict | None = None,
    backend: str | None = None,
) -> SquashRecord:
    """Build the aggregated record for one anchor.

    Each traversal is aligned to the anchor by its frame nearest to the
    anchor's global position (arclength origins differ between
    traversals); traversals whose nearest frame is farther than
    coverage_radius_m (default: anchor_spacing_m) do not cover the anchor.
    The min(T, t_max) most recent covering traversals contribute.
    """
    if not traversals:
        raise EmptyBuildError("no traversals supplied")
    if coverage_radius_m is None:
        coverage_radius_m = cfg.anchor_spacing_m
    fingerprint = config_fingerprint(cfg, spec)
    grids: list[SparseFeatureGrid] = []
    for traversal in _most_recent_first(traversals):
        if len(grids) == cfg.t_max:
            break
        frame_idx, dist = _nearest_frame(traversal, anchor.position)
        if dist > coverage_radius_m:
            continue
        local_arclength = float(traversal.arclengths[frame_idx])
        cache_key = None
        if grid_cache is not None:
            cache_key = (traversal.name, traversal.timestamp, round(local_arclength, 6),
                         spec.kind, spec.d_out, cfg.delta_m, cfg.h_start_m, cfg.h_end_m,
                         cfg.frame_stride_m, fingerprint & 0xFFFFFFFF)
            if cache_key in grid_cache:
                grids.append(grid_cache[cache_key])
                continue
        try:
            dense = combine_dense(traversal, local_arclength, cfg)
        except EmptySelectionError:
            continue
        grid = featurize(dense, spec, cfg.delta_m, backend=backend)
        if grid_cache is not None:
            grid_cache[cache_key] = grid
        grids.append(grid)
    if not grids:
        raise EmptyBuildError(
            f"no traversal covers anchor at arclength {anchor.arclength_m} m "
            f"(coverage radius {coverage_radius_m} m)"
        )
    return SquashRecord(
        anchor_position=anchor.position,
        anchor_arclength=anchor.arclength_m,
        grid=aggregate(grids, mode=agg_mode),
        t_used=len(grids),
        cfg_fingerprint=fingerprint,
    )


def route_anchors(traversals: list[Traversal], cfg: BuildConfig) -> list[Anchor]:
    """Anchor list for a route, defined on the most recent traversal.

    Positions are interpolated along that traversal's ego path at each
    anchor arclength.
    """
    if not traversals:
        raise EmptyBuildError("no traversals supplied")
    reference = _most_recent_first(traversals)[0]
    anchors = []
    for arc in anchor_locations(reference, cfg):
        anchors.append(Anchor(arclength_m=float(arc), position=reference.position_at(float(arc))))
    return anchors


def build_all(
    traversals: list[Traversal],
    cfg: BuildConfig,
    spec: FeaturizerSpec,
    *,
    agg_mode: str = "max",
    backend: str | None = None,
) -> list[SquashRecord]:
    """One record per route anchor; the whole offline build."""
    cache: dict = {}
    records = []
    for anchor in route_anchors(traversals, cfg):
        records.append(
            build_squash(
                traversals,
                anchor,
                cfg,
                spec,
                agg_mode=agg_mode,
                grid_cache=cache,
                backend=backend,
            )
        )
    return records
