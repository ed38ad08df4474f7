/**
 * Binary readers for the store's little-endian file formats:
 *
 *   .hpc  point clouds   — "HPC1", u32 n, u32 c, n*3 f32 coords, n*c f32 channels
 *   .sqh  anchor records — "SQH1", u16 version, f64 position*3, f64 arclength,
 *                          f32 delta, u32 d, u32 t_used, u64 fingerprint,
 *                          u64 entry count, entries (i32*3 + d*f32) sorted by
 *                          (i, j, k), trailing CRC32 over everything between
 *                          the magic and the checksum
 *   .hqk  query kernels  — "HQK1", u32 k, u32 d_in, u32 d_out, k^3*d_in*d_out
 *                          f32 weights, offset-major lexicographic
 *
 * All failures throw typed errors rather than returning partial data.
 */
import * as fs from "node:fs";

import { crc32 } from "./crc32.js";

export class FormatError extends Error {}
export class MagicMismatchError extends FormatError {}
export class VersionMismatchError extends FormatError {}
export class TruncatedFileError extends FormatError {}
export class ChecksumError extends FormatError {}

export interface HpcCloud {
  n: number;
  c: number;
  /** n*3 coordinates, row-major. */
  points: Float32Array;
  /** n*c channel values, row-major. */
  channels: Float32Array;
}

export interface SqhRecord {
  anchorPosition: [number, number, number];
  anchorArclength: number;
  /** Voxel edge length as the float64 value of the stored f32. */
  deltaM: number;
  d: number;
  tUsed: number;
  cfgFingerprint: bigint;
  nVoxels: number;
  /** nVoxels*3 voxel coordinates, row-major, sorted lexicographically. */
  coords: Int32Array;
  /** nVoxels*d feature values, row-major. */
  feats: Float32Array;
}

export interface QueryKernel {
  k: number;
  dIn: number;
  dOut: number;
  /** k^3 * dIn * dOut weights, offset-major lexicographic from (-r,-r,-r). */
  weights: Float32Array;
}

function magicOf(buf: Uint8Array): string {
  return String.fromCharCode(...buf.subarray(0, 4));
}

export function readHpc(path: string): HpcCloud {
  const buf = fs.readFileSync(path);
  if (buf.length < 12) throw new TruncatedFileError(`${path}: shorter than .hpc header`);
  if (magicOf(buf) !== "HPC1") throw new MagicMismatchError(`${path}: bad magic`);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const n = view.getUint32(4, true);
  const c = view.getUint32(8, true);
  const expected = 12 + 4 * n * (3 + c);
  if (buf.length !== expected) {
    throw new TruncatedFileError(`${path}: expected ${expected} bytes, got ${buf.length}`);
  }
  // Copy out of the file buffer to guarantee alignment for typed views.
  const body = new Uint8Array(buf.subarray(12)).buffer;
  return {
    n,
    c,
    points: new Float32Array(body, 0, 3 * n),
    channels: new Float32Array(body, 12 * n, n * c),
  };
}

export function readSqh(path: string): SqhRecord {
  const buf = fs.readFileSync(path);
  if (buf.length < 4 || magicOf(buf) !== "SQH1") {
    throw new MagicMismatchError(`${path}: bad magic`);
  }
  const FIXED = 62; // version .. entry_count
  if (buf.length < 4 + FIXED + 4) {
    throw new TruncatedFileError(`${path}: shorter than the fixed header`);
  }
  const body = buf.subarray(4, buf.length - 4);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const storedCrc = view.getUint32(buf.length - 4, true);
  if (crc32(body) !== storedCrc) throw new ChecksumError(`${path}: body CRC32 mismatch`);
  let off = 4;
  const version = view.getUint16(off, true);
  off += 2;
  if (version !== 1) throw new VersionMismatchError(`${path}: unsupported version ${version}`);
  const anchorPosition: [number, number, number] = [
    view.getFloat64(off, true),
    view.getFloat64(off + 8, true),
    view.getFloat64(off + 16, true),
  ];
  off += 24;
  const anchorArclength = view.getFloat64(off, true);
  off += 8;
  const deltaM = view.getFloat32(off, true);
  off += 4;
  const d = view.getUint32(off, true);
  off += 4;
  const tUsed = view.getUint32(off, true);
  off += 4;
  const cfgFingerprint = view.getBigUint64(off, true);
  off += 8;
  const nVoxels = Number(view.getBigUint64(off, true));
  off += 8;
  const entryBytes = nVoxels * (12 + 4 * d);
  if (buf.length !== off + entryBytes + 4) {
    throw new TruncatedFileError(`${path}: entry payload size mismatch`);
  }
  const coords = new Int32Array(nVoxels * 3);
  const feats = new Float32Array(nVoxels * d);
  for (let i = 0; i < nVoxels; i++) {
    const base = off + i * (12 + 4 * d);
    coords[3 * i] = view.getInt32(base, true);
    coords[3 * i + 1] = view.getInt32(base + 4, true);
    coords[3 * i + 2] = view.getInt32(base + 8, true);
    for (let j = 0; j < d; j++) {
      feats[d * i + j] = view.getFloat32(base + 12 + 4 * j, true);
    }
  }
  return {
    anchorPosition,
    anchorArclength,
    deltaM,
    d,
    tUsed,
    cfgFingerprint,
    nVoxels,
    coords,
    feats,
  };
}

export function readHqk(path: string): QueryKernel {
  const buf = fs.readFileSync(path);
  if (buf.length < 16) throw new TruncatedFileError(`${path}: shorter than .hqk header`);
  if (magicOf(buf) !== "HQK1") throw new MagicMismatchError(`${path}: bad magic`);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const k = view.getUint32(4, true);
  const dIn = view.getUint32(8, true);
  const dOut = view.getUint32(12, true);
  const count = k * k * k * dIn * dOut;
  if (buf.length !== 16 + 4 * count) {
    throw new TruncatedFileError(`${path}: expected ${16 + 4 * count} bytes`);
  }
  const weights = new Float32Array(new Uint8Array(buf.subarray(16)).buffer);
  return { k, dIn, dOut, weights };
}

/** One row of the pose CSV (`frame_id, r00..r22, tx, ty, tz`, header required). */
export function parsePoseCsv(path: string): { rotation: number[]; translation: number[] } {
  const lines = fs
    .readFileSync(path, "utf8")
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  if (lines.length < 2 || !lines[0].startsWith("frame_id")) {
    throw new FormatError(`${path}: bad or missing pose header`);
  }
  const fields = lines[1].split(",").map(Number);
  if (fields.length !== 13 || fields.some((v) => Number.isNaN(v))) {
    throw new FormatError(`${path}: malformed pose row`);
  }
  return { rotation: fields.slice(1, 10), translation: fields.slice(10, 13) };
}
