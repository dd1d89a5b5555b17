#!/usr/bin/env node
/** Regenerate the committed smoke corpus: ten 96x96 PPM images with
 * textured rectangles on a noisy background, plus proposals, ground truth,
 * and class lists. Fully deterministic.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { Rng } from "./rng.js";
import { writePpm, Image } from "./ppm.js";

const SIZE = 96;

type Painter = (x: number, y: number) => [number, number, number];

const TEXTURES: Record<string, Painter> = {
  "checker-red": (x, y) => (((x >> 3) + (y >> 3)) % 2 ? [200, 30, 30] : [245, 235, 235]),
  "stripes-blue": (x, _y) => ((x >> 2) % 2 ? [30, 40, 180] : [20, 20, 20]),
  "solid-green": () => [40, 160, 60],
  "dots-yellow": (x, y) => ((x % 8 < 3 && y % 8 < 3) ? [230, 210, 40] : [60, 60, 80]),
  "stripes-purple": (_x, y) => ((y >> 2) % 2 ? [150, 40, 170] : [230, 230, 210]),
};

const BASE_CLASSES = ["checker-red", "stripes-blue", "solid-green"];
const NOVEL_CLASSES = ["dots-yellow", "stripes-purple"];

interface PlacedBox {
  cls: string;
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

function paint(rng: Rng): { image: Image; boxes: PlacedBox[] } {
  const pixels = new Uint8Array(SIZE * SIZE * 3);
  for (let i = 0; i < SIZE * SIZE; i++) {
    const v = 100 + rng.int(30);
    pixels[i * 3] = v;
    pixels[i * 3 + 1] = v + rng.int(10);
    pixels[i * 3 + 2] = v;
  }
  const names = Object.keys(TEXTURES);
  const boxes: PlacedBox[] = [];
  const nBoxes = 2 + rng.int(2);
  for (let b = 0; b < nBoxes; b++) {
    const cls = names[rng.int(names.length)];
    const w = 20 + rng.int(25);
    const h = 20 + rng.int(25);
    const x1 = rng.int(SIZE - w - 2) + 1;
    const y1 = rng.int(SIZE - h - 2) + 1;
    const tex = TEXTURES[cls];
    for (let y = y1; y < y1 + h; y++) {
      for (let x = x1; x < x1 + w; x++) {
        const [r, g, bl] = tex(x - x1, y - y1);
        const o = (y * SIZE + x) * 3;
        pixels[o] = r;
        pixels[o + 1] = g;
        pixels[o + 2] = bl;
      }
    }
    boxes.push({ cls, x1, y1, x2: x1 + w, y2: y1 + h });
  }
  return { image: { width: SIZE, height: SIZE, pixels }, boxes };
}

function main(outDir: string): void {
  fs.mkdirSync(outDir, { recursive: true });
  const rng = new Rng("smoke-corpus-v1");
  const proposalLines: string[] = [];
  const gtLines: string[] = [];
  for (let i = 0; i < 10; i++) {
    const imageId = `smoke${String(i).padStart(2, "0")}`;
    const { image, boxes } = paint(rng);
    writePpm(path.join(outDir, `${imageId}.ppm`), image);
    let ordinal = 0;
    for (const b of boxes) {
      gtLines.push([imageId, b.cls, b.x1, b.y1, b.x2, b.y2].join("\t"));
      // tight proposal on the object
      proposalLines.push(
        [imageId, b.x1, b.y1, b.x2, b.y2, 0.9, `${imageId}#${ordinal++}`, "raw"].join("\t"),
      );
    }
    // one background proposal per image
    const bw = 18 + rng.int(12);
    const bx = rng.int(SIZE - bw - 1);
    const by = rng.int(SIZE - bw - 1);
    proposalLines.push(
      [imageId, bx, by, bx + bw, by + bw, 0.05, `${imageId}#${ordinal++}`, "raw"].join("\t"),
    );
  }
  fs.writeFileSync(path.join(outDir, "proposals.tsv"), proposalLines.join("\n") + "\n");
  fs.writeFileSync(path.join(outDir, "gt.tsv"), gtLines.join("\n") + "\n");
  fs.writeFileSync(path.join(outDir, "classes_base.txt"), BASE_CLASSES.join("\n") + "\n");
  fs.writeFileSync(path.join(outDir, "classes_novel.txt"), NOVEL_CLASSES.join("\n") + "\n");
  console.log(`wrote smoke corpus to ${outDir}`);
}

main(process.argv[2] ?? "smoke");
