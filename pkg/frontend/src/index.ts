export { BridgeHandle, openStore } from "./bridge.js";
export {
  ChecksumError,
  FormatError,
  MagicMismatchError,
  TruncatedFileError,
  VersionMismatchError,
  parsePoseCsv,
  readHpc,
  readHqk,
  readSqh,
} from "./formats.js";
export type { HpcCloud, QueryKernel, SqhRecord } from "./formats.js";
export { kernelOffsets, queryHistory, SparseGrid } from "./grid.js";
export { crc32 } from "./crc32.js";
