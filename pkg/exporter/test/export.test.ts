import { beforeAll, describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { runExport } from "../src/export.js";
import { readMatrix } from "../src/wire.js";
import { readProposals } from "../src/records.js";
import { writePpm } from "../src/ppm.js";
import { Rng } from "../src/rng.js";

const smokeDir = path.join(path.dirname(new URL(import.meta.url).pathname), "..", "smoke");
let outDir: string;

beforeAll(() => {
  outDir = fs.mkdtempSync(path.join(os.tmpdir(), "export-"));
  runExport({
    images: smokeDir,
    proposals: path.join(smokeDir, "proposals.tsv"),
    model: "seeded-vit-b8-64",
    layers: "all",
    out: outDir,
    classesBase: path.join(smokeDir, "classes_base.txt"),
    classesNovel: path.join(smokeDir, "classes_novel.txt"),
    attnVariant: "post",
  });
});

describe("export on the smoke corpus", () => {
  it("writes embeddings aligned with proposal order", () => {
    const proposals = readProposals(path.join(smokeDir, "proposals.tsv"));
    const m = readMatrix(path.join(outDir, "embeddings_region.vkm"), "region");
    expect(m.keys).toEqual(proposals.map((p) => p.proposalId));
    expect(m.header.rows).toBe(proposals.length);
  });

  it("keeps every embedding unit norm within 1e-3", () => {
    const m = readMatrix(path.join(outDir, "embeddings_region.vkm"));
    for (let r = 0; r < m.header.rows; r++) {
      let norm = 0;
      for (let d = 0; d < m.header.dim; d++) {
        const v = m.values[r * m.header.dim + d];
        norm += v * v;
      }
      expect(Math.abs(Math.sqrt(norm) - 1)).toBeLessThan(1e-3);
    }
  });

  it("writes one attention map per image with the patch-grid header", () => {
    const files = fs.readdirSync(path.join(outDir, "attn")).sort();
    expect(files).toHaveLength(10);
    const m = readMatrix(path.join(outDir, "attn", files[0]), "attention");
    expect(m.header.H_a).toBe(8);
    expect(m.header.W_a).toBe(8);
    expect(m.header.image_w).toBe(96);
    expect(m.header.image_h).toBe(96);
  });

  it("writes text banks for both splits", () => {
    const base = readMatrix(path.join(outDir, "text_base.vkm"), "text_base");
    const novel = readMatrix(path.join(outDir, "text_novel.vkm"), "text_novel");
    expect(base.keys).toEqual(["checker-red", "stripes-blue", "solid-green"]);
    expect(novel.keys).toEqual(["dots-yellow", "stripes-purple"]);
  });

  it("is byte-identical across runs", () => {
    const again = fs.mkdtempSync(path.join(os.tmpdir(), "export2-"));
    runExport({
      images: smokeDir,
      proposals: path.join(smokeDir, "proposals.tsv"),
      model: "seeded-vit-b8-64",
      layers: "all",
      out: again,
      classesBase: path.join(smokeDir, "classes_base.txt"),
      classesNovel: path.join(smokeDir, "classes_novel.txt"),
      attnVariant: "post",
    });
    for (const name of ["embeddings_region.vkm", "text_base.vkm", "manifest.json"]) {
      expect(fs.readFileSync(path.join(outDir, name)).equals(fs.readFileSync(path.join(again, name)))).toBe(true);
    }
  });

  it("skips unreadable images with a manifest record", () => {
    const broken = fs.mkdtempSync(path.join(os.tmpdir(), "broken-"));
    const rng = new Rng("tiny");
    const pixels = new Uint8Array(16 * 16 * 3);
    for (let i = 0; i < pixels.length; i++) pixels[i] = rng.int(256);
    writePpm(path.join(broken, "good.ppm"), { width: 16, height: 16, pixels });
    fs.writeFileSync(path.join(broken, "bad.ppm"), "not a ppm");
    fs.writeFileSync(
      path.join(broken, "proposals.tsv"),
      "good\t1\t1\t12\t12\t0.9\n" + "bad\t1\t1\t12\t12\t0.9\n" + "gone\t1\t1\t12\t12\t0.9\n",
    );
    const out = fs.mkdtempSync(path.join(os.tmpdir(), "brokenout-"));
    const result = runExport({
      images: broken,
      proposals: path.join(broken, "proposals.tsv"),
      model: "seeded-vit-b8-32",
      layers: "all",
      out,
      attnVariant: "post",
    });
    expect(result.embedded).toBe(1);
    expect(result.skippedImages.sort()).toEqual(["bad", "gone"]);
    const manifest = JSON.parse(fs.readFileSync(path.join(out, "manifest.json"), "utf-8"));
    expect(manifest.skipped_images.sort()).toEqual(["bad", "gone"]);
  });

  it("pre-softmax attention variant differs from post", () => {
    const pre = fs.mkdtempSync(path.join(os.tmpdir(), "pre-"));
    runExport({
      images: smokeDir,
      proposals: path.join(smokeDir, "proposals.tsv"),
      model: "seeded-vit-b8-64",
      layers: "all",
      out: pre,
      attnVariant: "pre",
    });
    const a = readMatrix(path.join(outDir, "attn", "smoke00.vkm"));
    const b = readMatrix(path.join(pre, "attn", "smoke00.vkm"));
    expect(Array.from(a.values)).not.toEqual(Array.from(b.values));
  });
});
