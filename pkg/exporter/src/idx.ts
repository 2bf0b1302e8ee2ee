/** IDX container read/write (unsigned-byte element type only). Images
 * use magic 0x00000803 with dims (count, rows, cols); labels use
 * 0x00000801 with dims (count). All header integers are big-endian. */

import * as fs from "node:fs";

export function writeIdxImages(path: string, images: Uint8Array,
                               count: number, rows: number, cols: number): void {
  if (images.length !== count * rows * cols) {
    throw new Error(`image buffer is ${images.length} bytes, expected ${count * rows * cols}`);
  }
  const header = Buffer.alloc(16);
  header.writeUInt32BE(0x00000803, 0);
  header.writeUInt32BE(count, 4);
  header.writeUInt32BE(rows, 8);
  header.writeUInt32BE(cols, 12);
  fs.writeFileSync(path, Buffer.concat([header, Buffer.from(images)]));
}

export function writeIdxLabels(path: string, labels: Uint8Array): void {
  const header = Buffer.alloc(8);
  header.writeUInt32BE(0x00000801, 0);
  header.writeUInt32BE(labels.length, 4);
  fs.writeFileSync(path, Buffer.concat([header, Buffer.from(labels)]));
}

export interface IdxData {
  dims: number[];
  data: Uint8Array;
}

export function readIdx(path: string): IdxData {
  const raw = fs.readFileSync(path);
  if (raw.length < 4 || raw[0] !== 0 || raw[1] !== 0) {
    throw new Error(`${path}: bad IDX magic`);
  }
  if (raw[2] !== 0x08) {
    throw new Error(`${path}: unsupported element type 0x${raw[2].toString(16)}`);
  }
  const ndim = raw[3];
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) {
    dims.push(raw.readUInt32BE(4 + 4 * i));
  }
  const headerLen = 4 + 4 * ndim;
  const count = dims.reduce((a, b) => a * b, 1);
  if (raw.length - headerLen !== count) {
    throw new Error(`${path}: expected ${count} data bytes, found ${raw.length - headerLen}`);
  }
  return { dims, data: new Uint8Array(raw.subarray(headerLen)) };
}
