/**
 * The bridge surface: open a store directory plus a query kernel, then
 * endow live scans with per-point history features as native arrays.
 *
 * Only the runtime hot path is exposed; building stores belongs to the
 * store's own CLI. Handles are read-only after open and may be shared
 * for concurrent endow calls; close() invalidates the handle (second
 * close is a no-op).
 */
import * as fs from "node:fs";
import * as path from "node:path";

import { FormatError, readHqk, readSqh, type QueryKernel } from "./formats.js";
import { queryHistory, SparseGrid } from "./grid.js";

interface StoredRecord {
  anchorPosition: [number, number, number];
  anchorArclength: number;
  grid: SparseGrid;
}

export class BridgeHandle {
  private records: StoredRecord[] | null;
  private readonly kernel: QueryKernel;
  readonly routeId: string;

  constructor(records: StoredRecord[], kernel: QueryKernel, routeId: string) {
    this.records = records;
    this.kernel = kernel;
    this.routeId = routeId;
  }

  get closed(): boolean {
    return this.records === null;
  }

  close(): void {
    this.records = null;
  }

  /** Record whose anchor is nearest the position; ties break to the
   * lower anchor arclength (records are kept sorted by arclength). */
  retrieve(position: ArrayLike<number>): { record: StoredRecord; distance: number } {
    const records = this.requireOpen();
    let best = -1;
    let bestD2 = Infinity;
    for (let i = 0; i < records.length; i++) {
      const a = records[i].anchorPosition;
      const dx = a[0] - position[0];
      const dy = a[1] - position[1];
      const dz = a[2] - position[2];
      const d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < bestD2) {
        bestD2 = d2;
        best = i;
      }
    }
    if (best < 0) throw new FormatError("store is empty");
    return { record: records[best], distance: Math.sqrt(bestD2) };
  }

  /**
   * History features for a sensor-frame scan at a pose.
   *
   * points: n*3 coordinates (Float32Array or Float64Array, row-major;
   * read in place, never copied). pose: 12 numbers, a row-major 3x4
   * [R | t] mapping sensor to global. Returns an n*dOut Float32Array.
   */
  endow(points: Float32Array | Float64Array, pose: ArrayLike<number>): Float32Array {
    this.requireOpen();
    if (points.length % 3 !== 0) {
      throw new RangeError(`points length ${points.length} is not a multiple of 3`);
    }
    if (pose.length !== 12) {
      throw new RangeError(`pose must hold 12 values (3x4 row-major), got ${pose.length}`);
    }
    const n = points.length / 3;
    for (let i = 0; i < points.length; i++) {
      if (!Number.isFinite(points[i])) throw new RangeError(`points[${i}] is not finite`);
    }
    const r00 = pose[0], r01 = pose[1], r02 = pose[2], tx = pose[3];
    const r10 = pose[4], r11 = pose[5], r12 = pose[6], ty = pose[7];
    const r20 = pose[8], r21 = pose[9], r22 = pose[10], tz = pose[11];
    // Same expression shape as the store's transform: each output
    // coordinate is ((r0*x + r1*y) + r2*z) + t in float64.
    const global = new Float64Array(points.length);
    for (let i = 0; i < n; i++) {
      const x = points[3 * i];
      const y = points[3 * i + 1];
      const z = points[3 * i + 2];
      global[3 * i] = r00 * x + r01 * y + r02 * z + tx;
      global[3 * i + 1] = r10 * x + r11 * y + r12 * z + ty;
      global[3 * i + 2] = r20 * x + r21 * y + r22 * z + tz;
    }
    const { record } = this.retrieve([tx, ty, tz]);
    return queryHistory(record.grid, this.kernel, global, n);
  }

  private requireOpen(): StoredRecord[] {
    if (this.records === null) {
      throw new Error("bridge handle is closed");
    }
    return this.records;
  }
}

interface StoreManifest {
  route_id: string;
  anchors: { file: string; arclength_m: number }[];
}

export function openStore(storeDir: string, kernelPath: string): BridgeHandle {
  const manifestPath = path.join(storeDir, "store.json");
  if (!fs.existsSync(manifestPath)) {
    throw new FormatError(`${storeDir}: missing store.json`);
  }
  const manifest = JSON.parse(fs.readFileSync(manifestPath, "utf8")) as StoreManifest;
  const kernel = readHqk(kernelPath);
  const records: StoredRecord[] = manifest.anchors
    .slice()
    .sort((a, b) => a.arclength_m - b.arclength_m)
    .map((entry) => {
      const rec = readSqh(path.join(storeDir, entry.file));
      return {
        anchorPosition: rec.anchorPosition,
        anchorArclength: rec.anchorArclength,
        grid: new SparseGrid(rec),
      };
    });
  for (const rec of records) {
    if (rec.grid.d !== kernel.dIn) {
      throw new FormatError(
        `kernel d_in=${kernel.dIn} does not match store grid d=${rec.grid.d}`,
      );
    }
  }
  return new BridgeHandle(records, kernel, manifest.route_id);
}
