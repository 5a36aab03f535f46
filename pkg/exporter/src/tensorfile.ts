/** Binary tensor files and the JSON manifest the detection engine reads.
 *
 * Tensor file layout (all integers little-endian):
 *
 *     bytes 0-3   magic "MASF"
 *     bytes 4-5   format version, u16 (currently 1)
 *     byte  6     dtype code, u8 (0 = float32 little-endian)
 *     byte  7     rank, u8
 *     next 4*rank dims, u32 each
 *     payload     row-major values
 *
 * Feature maps are rank 3 (channels, height, width).  Rank-4 files hold a
 * batch of maps; a manifest entry then addresses one row of the chunk with
 * {"path": ..., "index": i} instead of a bare path.
 */

import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { CorruptTensorFile } from "./errors";

export const MAGIC = "MASF";
export const FORMAT_VERSION = 1;
const DTYPE_F32 = 0;
const HEADER_BYTES = 8;

function payloadBytes(values: Float32Array): Buffer {
  const raw = Buffer.from(values.buffer, values.byteOffset, values.byteLength);
  if (os.endianness() === "LE") {
    return raw;
  }
  const swapped = Buffer.from(raw); // copy, then reorder each 4-byte group
  return swapped.swap32();
}

export function encodeTensor(dims: number[], values: Float32Array): Buffer {
  if (dims.length < 1 || dims.length > 4) {
    throw new CorruptTensorFile(`tensor rank must be 1..4, got ${dims.length}`);
  }
  let count = 1;
  for (const d of dims) {
    if (!Number.isInteger(d) || d < 1) {
      throw new CorruptTensorFile(`tensor dims must be positive integers, got [${dims}]`);
    }
    count *= d;
  }
  if (count !== values.length) {
    throw new CorruptTensorFile(`dims [${dims}] imply ${count} values, got ${values.length}`);
  }
  const head = Buffer.alloc(HEADER_BYTES + 4 * dims.length);
  head.write(MAGIC, 0, "ascii");
  head.writeUInt16LE(FORMAT_VERSION, 4);
  head.writeUInt8(DTYPE_F32, 6);
  head.writeUInt8(dims.length, 7);
  dims.forEach((d, i) => head.writeUInt32LE(d, HEADER_BYTES + 4 * i));
  return Buffer.concat([head, payloadBytes(values)]);
}

export function writeTensor(file: string, dims: number[], values: Float32Array): void {
  fs.writeFileSync(file, encodeTensor(dims, values));
}

export function readTensor(file: string): { dims: number[]; values: Float32Array } {
  const buf = fs.readFileSync(file);
  if (buf.length < HEADER_BYTES) {
    throw new CorruptTensorFile(`${file}: truncated header`);
  }
  if (buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new CorruptTensorFile(`${file}: bad magic`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== FORMAT_VERSION) {
    throw new CorruptTensorFile(`${file}: unsupported tensor version ${version}`);
  }
  if (buf.readUInt8(6) !== DTYPE_F32) {
    throw new CorruptTensorFile(`${file}: unsupported dtype code ${buf.readUInt8(6)}`);
  }
  const rank = buf.readUInt8(7);
  if (rank < 1 || rank > 4) {
    throw new CorruptTensorFile(`${file}: unsupported rank ${rank}`);
  }
  if (buf.length < HEADER_BYTES + 4 * rank) {
    throw new CorruptTensorFile(`${file}: truncated dims`);
  }
  const dims: number[] = [];
  for (let i = 0; i < rank; i++) {
    dims.push(buf.readUInt32LE(HEADER_BYTES + 4 * i));
  }
  const count = dims.reduce((a, b) => a * b, 1);
  const start = HEADER_BYTES + 4 * rank;
  if (buf.length !== start + 4 * count) {
    throw new CorruptTensorFile(`${file}: payload length does not match dims [${dims}]`);
  }
  let body = buf.subarray(start);
  if (os.endianness() === "BE") {
    body = Buffer.from(body).swap32();
  }
  const values = new Float32Array(count);
  values.set(new Float32Array(body.buffer, body.byteOffset, count));
  return { dims, values };
}

export interface LayerDescriptor {
  id: number;
  name: string;
  channels: number;
  height: number;
  width: number;
}

export type TensorRef = string | { path: string; index: number };

export interface SampleDescriptor {
  id: string;
  tensors: Record<string, TensorRef>;
  y?: number;
  y_hat?: number;
}

export interface ManifestDoc {
  dataset: string;
  k: number;
  layers: LayerDescriptor[];
  samples: SampleDescriptor[];
}

export function writeManifest(doc: ManifestDoc, file: string): void {
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, JSON.stringify(doc, null, 1));
}
