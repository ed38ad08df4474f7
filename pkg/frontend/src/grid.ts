/**
 * Sparse voxel grid lookup and the lazy K x K x K convolution query.
 *
 * Arithmetic contract (shared with the store's builder): per output
 * element, contributions theta[o, ci, co] * feature[ci] accumulate in
 * float64, offsets in lexicographic order then input channels in index
 * order, and the result rounds to float32 once at the end. JS numbers
 * are IEEE float64 and Float32Array assignment rounds to nearest, so the
 * history vectors here are bit-identical to the store's own query path.
 */
import type { QueryKernel, SqhRecord } from "./formats.js";

export class SparseGrid {
  readonly deltaM: number;
  readonly d: number;
  readonly nVoxels: number;
  /** nVoxels * d feature values, row-major. */
  readonly feats: Float32Array;
  private readonly rows: Map<string, number>;

  constructor(record: SqhRecord) {
    this.deltaM = record.deltaM;
    this.d = record.d;
    this.nVoxels = record.nVoxels;
    this.feats = record.feats;
    this.rows = new Map();
    for (let i = 0; i < record.nVoxels; i++) {
      const key = `${record.coords[3 * i]},${record.coords[3 * i + 1]},${record.coords[3 * i + 2]}`;
      this.rows.set(key, i);
    }
  }

  row(i: number, j: number, k: number): number {
    const r = this.rows.get(`${i},${j},${k}`);
    return r === undefined ? -1 : r;
  }
}

/** Lexicographic (-r..r)^3 offsets for an odd kernel size. */
export function kernelOffsets(k: number): Int32Array {
  const r = (k - 1) / 2;
  const out = new Int32Array(k * k * k * 3);
  let p = 0;
  for (let di = -r; di <= r; di++)
    for (let dj = -r; dj <= r; dj++)
      for (let dk = -r; dk <= r; dk++) {
        out[p++] = di;
        out[p++] = dj;
        out[p++] = dk;
      }
  return out;
}

/**
 * History features for global-frame points: for each point's voxel v,
 * sum over offsets o of theta[o]^T grid[v + o], missing voxels zero.
 * Points sharing a voxel reuse a memoized vector.
 */
export function queryHistory(
  grid: SparseGrid,
  kernel: QueryKernel,
  globalPoints: Float64Array,
  n: number,
): Float32Array {
  if (kernel.dIn !== grid.d) {
    throw new Error(`kernel d_in=${kernel.dIn} does not match grid d=${grid.d}`);
  }
  const { k, dIn, dOut, weights } = kernel;
  const offsets = kernelOffsets(k);
  const k3 = k * k * k;
  const delta = grid.deltaM;
  const history = new Float32Array(n * dOut);
  const memo = new Map<string, Float32Array>();
  const acc = new Float64Array(dOut);
  for (let p = 0; p < n; p++) {
    // Same saturation bound as the store's quantizer; such voxels can
    // never match an entry, so clamping only prevents index overflow.
    const vi = clamp(Math.floor(globalPoints[3 * p] / delta));
    const vj = clamp(Math.floor(globalPoints[3 * p + 1] / delta));
    const vk = clamp(Math.floor(globalPoints[3 * p + 2] / delta));
    const key = `${vi},${vj},${vk}`;
    let vec = memo.get(key);
    if (vec === undefined) {
      acc.fill(0);
      for (let o = 0; o < k3; o++) {
        const row = grid.row(vi + offsets[3 * o], vj + offsets[3 * o + 1], vk + offsets[3 * o + 2]);
        if (row < 0) continue;
        for (let ci = 0; ci < dIn; ci++) {
          const v = grid.feats[row * dIn + ci];
          const wBase = (o * dIn + ci) * dOut;
          for (let co = 0; co < dOut; co++) {
            acc[co] += weights[wBase + co] * v;
          }
        }
      }
      vec = new Float32Array(dOut);
      vec.set(acc);
      memo.set(key, vec);
    }
    history.set(vec, p * dOut);
  }
  return history;
}

function clamp(v: number): number {
  const SAT = 2 ** 40;
  return v > SAT ? SAT : v < -SAT ? -SAT : v;
}
