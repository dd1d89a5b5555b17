/** The matrix container shared with the main pipeline.
 *
 * Layout: 16-byte magic "VKDETMATRIX00001", little-endian u32 header
 * length, UTF-8 JSON header with at least {dim, rows, kind, version, keys},
 * row-major little-endian float32 payload, then an optional
 * newline-delimited key list (one key per row).
 */

import * as fs from "node:fs";

export const MAGIC = "VKDETMATRIX00001";
export const FORMAT_VERSION = 1;

export interface MatrixHeader {
  dim: number;
  rows: number;
  kind: string;
  version: number;
  keys: boolean;
  [extra: string]: unknown;
}

export interface Matrix {
  values: Float32Array; // rows * dim, row-major
  header: MatrixHeader;
  keys: string[] | null;
}

function sortedJson(obj: Record<string, unknown>): string {
  const keys = Object.keys(obj).sort();
  const parts = keys.map((k) => `${JSON.stringify(k)}:${JSON.stringify(obj[k])}`);
  return `{${parts.join(",")}}`;
}

export function writeMatrix(
  path: string,
  values: Float32Array | number[],
  rows: number,
  dim: number,
  kind: string,
  keys: string[] | null = null,
  extra: Record<string, unknown> = {},
): void {
  const data = values instanceof Float32Array ? values : Float32Array.from(values);
  if (data.length !== rows * dim) {
    throw new Error(`payload length ${data.length} does not match ${rows}x${dim}`);
  }
  if (keys !== null) {
    if (keys.length !== rows) throw new Error("one key per row required");
    for (const k of keys) {
      if (k.includes("\n") || k.includes("\t")) {
        throw new Error(`key contains forbidden whitespace: ${k}`);
      }
    }
  }
  const header: MatrixHeader = {
    dim,
    rows,
    kind,
    version: FORMAT_VERSION,
    keys: keys !== null,
    ...extra,
  };
  const blob = Buffer.from(sortedJson(header), "utf-8");
  const lenBuf = Buffer.alloc(4);
  lenBuf.writeUInt32LE(blob.length, 0);
  const payload = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i], i * 4);
  const chunks = [Buffer.from(MAGIC, "ascii"), lenBuf, blob, payload];
  if (keys !== null) chunks.push(Buffer.from(keys.join("\n") + "\n", "utf-8"));
  fs.writeFileSync(path, Buffer.concat(chunks));
}

export function readMatrix(path: string, expectKind?: string): Matrix {
  const raw = fs.readFileSync(path);
  if (raw.length < 20 || raw.subarray(0, 16).toString("ascii") !== MAGIC) {
    throw new Error(`${path}: not a matrix container (bad magic)`);
  }
  const hlen = raw.readUInt32LE(16);
  const header = JSON.parse(raw.subarray(20, 20 + hlen).toString("utf-8")) as MatrixHeader;
  if (header.version !== FORMAT_VERSION) {
    throw new Error(`${path}: format version ${header.version}, expected ${FORMAT_VERSION}`);
  }
  const body = 20 + hlen;
  const nbytes = header.rows * header.dim * 4;
  if (body + nbytes > raw.length) throw new Error(`${path}: truncated payload`);
  const values = new Float32Array(header.rows * header.dim);
  for (let i = 0; i < values.length; i++) values[i] = raw.readFloatLE(body + i * 4);
  let keys: string[] | null = null;
  if (header.keys) {
    const tail = raw.subarray(body + nbytes).toString("utf-8");
    keys = tail.split("\n").filter((line, i, arr) => i < arr.length - 1 || line.length > 0);
    if (keys.length !== header.rows) {
      throw new Error(`${path}: key list has ${keys.length} entries for ${header.rows} rows`);
    }
  }
  if (expectKind && header.kind !== expectKind) {
    throw new Error(`${path}: kind ${header.kind}, expected ${expectKind}`);
  }
  return { values, header, keys };
}

export function writeAttention(
  path: string,
  grid: Float64Array,
  gridH: number,
  gridW: number,
  imageW: number,
  imageH: number,
): void {
  writeMatrix(path, Float32Array.from(grid), gridH, gridW, "attention", null, {
    H_a: gridH,
    W_a: gridW,
    image_w: imageW,
    image_h: imageH,
  });
}
