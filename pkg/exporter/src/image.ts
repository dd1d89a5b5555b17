/** Cropping, square padding, and bilinear resizing of RGB images. */

import type { Image } from "./ppm.js";

/** Crop a box (clamped to bounds), pad the shorter side symmetrically with
 * the crop's mean color to a square, and keep full content. Square padding
 * preserves elongated content that center-cropping would cut away. */
export function cropSquarePadded(
  image: Image,
  x1: number,
  y1: number,
  x2: number,
  y2: number,
): Image {
  const cx1 = Math.max(0, Math.min(Math.floor(x1), image.width - 1));
  const cy1 = Math.max(0, Math.min(Math.floor(y1), image.height - 1));
  const cx2 = Math.max(cx1 + 1, Math.min(Math.ceil(x2), image.width));
  const cy2 = Math.max(cy1 + 1, Math.min(Math.ceil(y2), image.height));
  const w = cx2 - cx1;
  const h = cy2 - cy1;
  const side = Math.max(w, h);
  const mean = [0, 0, 0];
  for (let y = cy1; y < cy2; y++) {
    for (let x = cx1; x < cx2; x++) {
      const o = (y * image.width + x) * 3;
      mean[0] += image.pixels[o];
      mean[1] += image.pixels[o + 1];
      mean[2] += image.pixels[o + 2];
    }
  }
  const n = w * h;
  const pad = [Math.round(mean[0] / n), Math.round(mean[1] / n), Math.round(mean[2] / n)];
  const out = new Uint8Array(side * side * 3);
  const offX = Math.floor((side - w) / 2);
  const offY = Math.floor((side - h) / 2);
  for (let y = 0; y < side; y++) {
    for (let x = 0; x < side; x++) {
      const o = (y * side + x) * 3;
      const sx = x - offX;
      const sy = y - offY;
      if (sx >= 0 && sx < w && sy >= 0 && sy < h) {
        const s = ((cy1 + sy) * image.width + (cx1 + sx)) * 3;
        out[o] = image.pixels[s];
        out[o + 1] = image.pixels[s + 1];
        out[o + 2] = image.pixels[s + 2];
      } else {
        out[o] = pad[0];
        out[o + 1] = pad[1];
        out[o + 2] = pad[2];
      }
    }
  }
  return { width: side, height: side, pixels: out };
}

/** Bilinear resize to size x size (align-corners sampling). */
export function resize(image: Image, size: number): Image {
  const out = new Uint8Array(size * size * 3);
  const sx = size > 1 ? (image.width - 1) / (size - 1) : 0;
  const sy = size > 1 ? (image.height - 1) / (size - 1) : 0;
  for (let y = 0; y < size; y++) {
    const gy = y * sy;
    const y0 = Math.min(Math.floor(gy), image.height - 1);
    const y1 = Math.min(y0 + 1, image.height - 1);
    const fy = gy - y0;
    for (let x = 0; x < size; x++) {
      const gx = x * sx;
      const x0 = Math.min(Math.floor(gx), image.width - 1);
      const x1 = Math.min(x0 + 1, image.width - 1);
      const fx = gx - x0;
      for (let c = 0; c < 3; c++) {
        const v =
          image.pixels[(y0 * image.width + x0) * 3 + c] * (1 - fx) * (1 - fy) +
          image.pixels[(y0 * image.width + x1) * 3 + c] * fx * (1 - fy) +
          image.pixels[(y1 * image.width + x0) * 3 + c] * (1 - fx) * fy +
          image.pixels[(y1 * image.width + x1) * 3 + c] * fx * fy;
        out[(y * size + x) * 3 + c] = Math.round(v);
      }
    }
  }
  return { width: size, height: size, pixels: out };
}
