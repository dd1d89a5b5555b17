#!/usr/bin/env node
/** Export region embeddings, class text embeddings, and attention maps.
 *
 *   vkdet-export --images DIR --proposals FILE --model NAME --layers SPEC \
 *                --out DIR [--classes-base FILE] [--classes-novel FILE] \
 *                [--attn-variant post|pre]
 *
 * Images are <image_id>.ppm files under --images. Each proposal is cropped
 * (square-padded), encoded, L2-normalized, and written in proposal-file
 * order; attention maps are the mean over the selected layers of the
 * CLS-to-patch attention of the whole image, on the encoder's patch grid.
 * Unreadable images are skipped with a warning and recorded in
 * manifest.json.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { Encoder, MODELS, parseLayers, averageLayers, AttentionVariant } from "./encoder.js";
import { cropSquarePadded, resize } from "./image.js";
import { readPpm, Image } from "./ppm.js";
import { readProposals, Proposal } from "./records.js";
import { writeAttention, writeMatrix } from "./wire.js";

interface Args {
  images: string;
  proposals: string;
  model: string;
  layers: string;
  out: string;
  classesBase?: string;
  classesNovel?: string;
  attnVariant: AttentionVariant;
}

function parseArgs(argv: string[]): Args {
  const out: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    if (!flag.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near ${flag}`);
    }
    out[flag.slice(2)] = argv[i + 1];
  }
  for (const required of ["images", "proposals", "out"]) {
    if (!(required in out)) throw new Error(`--${required} is required`);
  }
  const variant = out["attn-variant"] ?? "post";
  if (variant !== "post" && variant !== "pre") {
    throw new Error(`--attn-variant must be post or pre, got ${variant}`);
  }
  return {
    images: out.images,
    proposals: out.proposals,
    model: out.model ?? "seeded-vit-b8-64",
    layers: out.layers ?? "all",
    out: out.out,
    classesBase: out["classes-base"],
    classesNovel: out["classes-novel"],
    attnVariant: variant,
  };
}

function readClassList(file: string): string[] {
  return fs
    .readFileSync(file, "utf-8")
    .split("\n")
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
}

export interface ExportResult {
  embedded: number;
  attentionImages: number;
  skippedImages: string[];
}

export function runExport(args: Args): ExportResult {
  const encoder = new Encoder(args.model);
  const layers = parseLayers(args.layers, encoder.spec.layers);
  const proposals = readProposals(args.proposals);
  fs.mkdirSync(path.join(args.out, "attn"), { recursive: true });

  const imageCache = new Map<string, Image | null>();
  const skipped: string[] = [];
  const loadImage = (imageId: string): Image | null => {
    if (imageCache.has(imageId)) return imageCache.get(imageId)!;
    const file = path.join(args.images, `${imageId}.ppm`);
    let image: Image | null = null;
    try {
      image = readPpm(file);
    } catch (err) {
      console.error(`warning: skipping unreadable image ${file}: ${err}`);
      skipped.push(imageId);
    }
    imageCache.set(imageId, image);
    return image;
  };

  // region embeddings, one row per readable proposal, in file order
  const dim = encoder.spec.dim;
  const rows: Float64Array[] = [];
  const keys: string[] = [];
  const byImage = new Map<string, Proposal[]>();
  for (const p of proposals) {
    if (!byImage.has(p.imageId)) byImage.set(p.imageId, []);
    byImage.get(p.imageId)!.push(p);
    const image = loadImage(p.imageId);
    if (image === null) continue;
    const crop = resize(cropSquarePadded(image, p.x1, p.y1, p.x2, p.y2), encoder.spec.inputSize);
    rows.push(encoder.forward(crop).embedding);
    keys.push(p.proposalId);
  }
  const flat = new Float32Array(rows.length * dim);
  rows.forEach((r, i) => flat.set(Float32Array.from(r), i * dim));
  writeMatrix(path.join(args.out, "embeddings_region.vkm"), flat, rows.length, dim, "region", keys, {
    model: encoder.spec.name,
  });

  // whole-image attention maps averaged over the selected layers
  let attentionImages = 0;
  for (const imageId of byImage.keys()) {
    const image = loadImage(imageId);
    if (image === null) continue;
    const scaled = resize(image, encoder.spec.inputSize);
    const maps = encoder.forward(scaled, args.attnVariant).attention;
    const grid = averageLayers(maps, layers);
    writeAttention(
      path.join(args.out, "attn", `${imageId}.vkm`),
      grid,
      encoder.gridSize,
      encoder.gridSize,
      image.width,
      image.height,
    );
    attentionImages++;
  }

  // frozen text embeddings per split
  const writeText = (file: string, kind: string, names: string[]) => {
    const mat = new Float32Array(names.length * dim);
    names.forEach((n, i) => mat.set(Float32Array.from(encoder.encodeText(n)), i * dim));
    writeMatrix(path.join(args.out, file), mat, names.length, dim, kind, names, {
      model: encoder.spec.name,
    });
  };
  if (args.classesBase) writeText("text_base.vkm", "text_base", readClassList(args.classesBase));
  if (args.classesNovel) writeText("text_novel.vkm", "text_novel", readClassList(args.classesNovel));

  const manifest = {
    model: encoder.spec.name,
    layers: args.layers,
    attn_variant: args.attnVariant,
    proposals: proposals.length,
    embedded: rows.length,
    attention_images: attentionImages,
    skipped_images: skipped,
  };
  fs.writeFileSync(path.join(args.out, "manifest.json"), JSON.stringify(manifest, null, 2) + "\n");
  return { embedded: rows.length, attentionImages, skippedImages: skipped };
}

const isMain = process.argv[1] && path.resolve(process.argv[1]) === path.resolve(new URL(import.meta.url).pathname);
if (isMain) {
  try {
    const args = parseArgs(process.argv.slice(2));
    const result = runExport(args);
    console.log(
      `exported ${result.embedded} embeddings, ${result.attentionImages} attention maps` +
        (result.skippedImages.length ? `, skipped ${result.skippedImages.length} images` : ""),
    );
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    process.exit(1);
  }
}
