/** Binary PPM (P6, maxval 255) reading and writing. */

import * as fs from "node:fs";

export interface Image {
  width: number;
  height: number;
  pixels: Uint8Array; // RGB, row-major
}

export function readPpm(path: string): Image {
  const raw = fs.readFileSync(path);
  let pos = 0;
  const token = (): string => {
    while (pos < raw.length && /\s/.test(String.fromCharCode(raw[pos]))) pos++;
    if (raw[pos] === 0x23) {
      // comment line
      while (pos < raw.length && raw[pos] !== 0x0a) pos++;
      return token();
    }
    const start = pos;
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos++;
    return raw.subarray(start, pos).toString("ascii");
  };
  const magic = token();
  if (magic !== "P6") throw new Error(`${path}: not a binary PPM`);
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0 && height > 0) || maxval !== 255) {
    throw new Error(`${path}: unsupported PPM geometry`);
  }
  pos++; // single whitespace after maxval
  const need = width * height * 3;
  if (raw.length - pos < need) throw new Error(`${path}: truncated pixel data`);
  return { width, height, pixels: new Uint8Array(raw.subarray(pos, pos + need)) };
}

export function writePpm(path: string, image: Image): void {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  fs.writeFileSync(path, Buffer.concat([header, Buffer.from(image.pixels)]));
}
