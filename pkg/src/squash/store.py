"""Geo-indexed persistence of anchor records.

The ``.sqh`` format is little-endian and bit-exact:

    magic "SQH1" | u16 version | f64 anchor_position x3 | f64 anchor_arclength
    | f32 delta_m | u32 d | u32 t_used | u64 cfg_fingerprint | u64 entry_count
    | entries sorted lexicographically by (i, j, k), each i32 x3 + d x f32
    | u32 CRC32 of everything between the magic and this checksum

Sorted entries make round-trips byte-exact and diffs meaningful. A store
directory holds one ``.sqh`` per anchor plus ``store.json`` listing them.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .builder import SquashRecord
from .errors import (
    ChecksumError,
    MagicMismatchError,
    RecordNotFoundError,
    TruncatedFileError,
    ValidationError,
    VersionMismatchError,
)
from .sparse_grid import SparseFeatureGrid

SQH_MAGIC = b"SQH1"
SQH_VERSION = 1

_FIXED = struct.Struct("<H3ddfIIQQ")  # version .. entry_count (after the magic)
_MIN_SIZE = 4 + _FIXED.size + 4


def serialize_record(record: SquashRecord) -> bytes:
    grid = record.grid
    body = _FIXED.pack(
        SQH_VERSION,
        record.anchor_position[0],
        record.anchor_position[1],
        record.anchor_position[2],
        record.anchor_arclength,
        grid.delta_m,
        grid.d,
        record.t_used,
        record.cfg_fingerprint,
        grid.n,
    )
    if grid.n:
        entry = np.empty(grid.n, dtype=[("c", "<i4", (3,)), ("f", "<f4", (grid.d,))])
        entry["c"] = grid.coords.astype("<i4")
        entry["f"] = grid.feats
        body += entry.tobytes()
    return SQH_MAGIC + body + struct.pack("<I", zlib.crc32(body))


def deserialize_record(data: bytes, source: str = "<bytes>") -> SquashRecord:
    if len(data) < 4 or data[:4] != SQH_MAGIC:
        raise MagicMismatchError(f"{source}: bad magic {data[:4]!r}")
    if len(data) < _MIN_SIZE:
        raise TruncatedFileError(f"{source}: shorter than the fixed header")
    body = data[4:-4]
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(body) != stored_crc:
        raise ChecksumError(f"{source}: body CRC32 mismatch")
    (version, px, py, pz, arclength, delta_m, d, t_used, fingerprint, n_entries) = (
        _FIXED.unpack_from(body)
    )
    if version != SQH_VERSION:
        raise VersionMismatchError(f"{source}: unsupported version {version}")
    entry_bytes = n_entries * (12 + 4 * d)
    if len(body) != _FIXED.size + entry_bytes:
        raise TruncatedFileError(
            f"{source}: body holds {len(body) - _FIXED.size} entry bytes, "
            f"expected {entry_bytes}"
        )
    if n_entries:
        entry = np.frombuffer(
            body, dtype=[("c", "<i4", (3,)), ("f", "<f4", (d,))], offset=_FIXED.size
        )
        coords = entry["c"].astype(np.int64)
        feats = entry["f"].reshape(n_entries, d)
    else:
        coords = np.zeros((0, 3), np.int64)
        feats = np.zeros((0, d), np.float32)
    return SquashRecord(
        anchor_position=np.array([px, py, pz]),
        anchor_arclength=arclength,
        grid=SparseFeatureGrid(coords, feats, delta_m),
        t_used=t_used,
        cfg_fingerprint=fingerprint,
    )


def save_record(record: SquashRecord, path) -> None:
    Path(path).write_bytes(serialize_record(record))


def load_record(path) -> SquashRecord:
    return deserialize_record(Path(path).read_bytes(), source=str(path))


class SquashStore:
    """Records for one route, ordered and indexed by anchor arclength."""

    def __init__(self, records: list[SquashRecord], route_id: str = "route"):
        records = sorted(records, key=lambda r: r.anchor_arclength)
        arcs = [r.anchor_arclength for r in records]
        if len(set(arcs)) != len(arcs):
            raise ValidationError("anchor arclengths must be unique per route")
        positions = {tuple(r.anchor_position) for r in records}
        if len(positions) != len(records):
            raise ValidationError("anchor positions must be unique per route")
        self.route_id = route_id
        self.records = tuple(records)
        self._positions = (
            np.stack([r.anchor_position for r in records])
            if records
            else np.zeros((0, 3))
        )

    def __len__(self) -> int:
        return len(self.records)

    def retrieve(self, position) -> tuple[SquashRecord, float]:
        """Record whose anchor is nearest in Euclidean distance, plus that
        distance; ties go to the lower anchor arclength. Callers enforce
        their own freshness threshold on the returned distance."""
        if not self.records:
            raise RecordNotFoundError("store is empty")
        position = np.asarray(position, dtype=np.float64).reshape(3)
        deltas = self._positions - position[None, :]
        d2 = np.einsum("ij,ij->i", deltas, deltas)
        # Records are sorted by arclength and argmin returns the first
        # minimum, which implements the tie-break.
        idx = int(np.argmin(d2))
        return self.records[idx], float(np.sqrt(d2[idx]))

    def storage_report(self) -> dict:
        """Uncompressed serialized sizes, per record and grouped by delta."""
        per_record = []
        by_delta: dict[float, int] = {}
        total = 0
        for rec in self.records:
            size = len(serialize_record(rec))
            per_record.append(
                {
                    "anchor_arclength_m": rec.anchor_arclength,
                    "n_voxels": rec.grid.n,
                    "bytes": size,
                }
            )
            by_delta[rec.grid.delta_m] = by_delta.get(rec.grid.delta_m, 0) + size
            total += size
        return {
            "route_id": self.route_id,
            "total_bytes": total,
            "by_delta": {repr(k): v for k, v in sorted(by_delta.items())},
            "records": per_record,
        }


def save_store(store: SquashStore, directory) -> list[Path]:
    """Write one .sqh per anchor plus store.json; returns written paths.

    On failure the partially written files are removed.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        anchors = []
        for i, rec in enumerate(store.records):
            fname = f"{i:06d}.sqh"
            save_record(rec, directory / fname)
            written.append(directory / fname)
            anchors.append(
                {
                    "file": fname,
                    "arclength_m": rec.anchor_arclength,
                    "position": [float(v) for v in rec.anchor_position],
                    "n_voxels": rec.grid.n,
                    "t_used": rec.t_used,
                }
            )
        manifest = {
            "format": "squash-store",
            "version": SQH_VERSION,
            "route_id": store.route_id,
            "cfg_fingerprint": (
                f"{store.records[0].cfg_fingerprint:016x}" if store.records else None
            ),
            "anchors": anchors,
        }
        manifest_path = directory / "store.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(manifest_path)
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return written


def load_store(directory) -> SquashStore:
    directory = Path(directory)
    manifest_path = directory / "store.json"
    if not manifest_path.is_file():
        raise ValidationError(f"{directory}: missing store.json")
    try:
        manifest = json.loads(manifest_path.read_text())
        route_id = manifest["route_id"]
        anchor_entries = manifest["anchors"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{manifest_path}: malformed manifest: {exc}") from exc
    records = [load_record(directory / entry["file"]) for entry in anchor_entries]
    return SquashStore(records, route_id=route_id)
