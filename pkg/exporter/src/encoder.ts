/** Deterministic seeded vision encoder.
 *
 * A compact ViT-style forward pass whose weights are derived from the model
 * identifier, so a given model name always produces the same embeddings and
 * attention maps on any machine, with no downloaded artifacts. Patches are
 * linearly embedded, a CLS token is prepended, and a stack of single-head
 * self-attention layers with residual connections runs over the tokens. The
 * CLS state (L2-normalized) is the crop embedding; the CLS-to-patch rows of
 * each layer's attention are the per-layer attention maps.
 *
 * Text embeddings are unit vectors seeded from the class name, mirroring a
 * frozen text tower at desk scale.
 */

import type { Image } from "./ppm.js";
import { Rng } from "./rng.js";

export interface ModelSpec {
  name: string;
  inputSize: number;
  patchSize: number;
  dim: number;
  layers: number;
}

export const MODELS: Record<string, ModelSpec> = {
  "seeded-vit-b8-64": { name: "seeded-vit-b8-64", inputSize: 64, patchSize: 8, dim: 64, layers: 4 },
  "seeded-vit-b8-32": { name: "seeded-vit-b8-32", inputSize: 32, patchSize: 8, dim: 48, layers: 3 },
};

export type AttentionVariant = "post" | "pre";

interface Weights {
  embed: Float64Array; // dim x patchDim
  embedBias: Float64Array; // dim
  cls: Float64Array; // dim
  q: Float64Array[]; // per layer, dim x dim
  k: Float64Array[];
  v: Float64Array[];
}

function seededMatrix(tag: string, rows: number, cols: number, scale: number): Float64Array {
  const rng = new Rng(tag);
  const out = rng.gaussArray(rows * cols);
  for (let i = 0; i < out.length; i++) out[i] *= scale;
  return out;
}

export class Encoder {
  readonly spec: ModelSpec;
  private readonly weights: Weights;
  readonly gridSize: number;
  readonly tokens: number;

  constructor(modelName: string) {
    const spec = MODELS[modelName];
    if (!spec) {
      throw new Error(
        `unknown model ${modelName}; available: ${Object.keys(MODELS).join(", ")}`,
      );
    }
    this.spec = spec;
    this.gridSize = spec.inputSize / spec.patchSize;
    this.tokens = this.gridSize * this.gridSize;
    const patchDim = spec.patchSize * spec.patchSize * 3;
    const w: Weights = {
      embed: seededMatrix(`${spec.name}/embed`, spec.dim, patchDim, 1 / Math.sqrt(patchDim)),
      embedBias: seededMatrix(`${spec.name}/embed-bias`, spec.dim, 1, 0.02),
      cls: seededMatrix(`${spec.name}/cls`, spec.dim, 1, 1 / Math.sqrt(spec.dim)),
      q: [],
      k: [],
      v: [],
    };
    for (let l = 0; l < spec.layers; l++) {
      const scale = 1 / Math.sqrt(spec.dim);
      w.q.push(seededMatrix(`${spec.name}/layer${l}/q`, spec.dim, spec.dim, scale));
      w.k.push(seededMatrix(`${spec.name}/layer${l}/k`, spec.dim, spec.dim, scale));
      w.v.push(seededMatrix(`${spec.name}/layer${l}/v`, spec.dim, spec.dim, scale));
    }
    this.weights = w;
  }

  /** Forward pass over an inputSize x inputSize RGB image. */
  forward(
    image: Image,
    variant: AttentionVariant = "post",
  ): { embedding: Float64Array; attention: Float64Array[] } {
    const { inputSize, dim, layers } = this.spec;
    if (image.width !== inputSize || image.height !== inputSize) {
      throw new Error(`encoder expects ${inputSize}x${inputSize} input`);
    }
    const nTokens = this.tokens + 1; // CLS first
    let x = this.tokenStates(image);

    const attentionMaps: Float64Array[] = [];
    const invSqrtDim = 1 / Math.sqrt(dim);
    for (let l = 0; l < layers; l++) {
      const q = this.project(x, this.weights.q[l], nTokens);
      const k = this.project(x, this.weights.k[l], nTokens);
      const v = this.project(x, this.weights.v[l], nTokens);
      const next = new Float64Array(x); // residual
      const clsRow = new Float64Array(this.tokens);
      const logits = new Float64Array(nTokens);
      const weightsBuf = new Float64Array(nTokens);
      for (let t = 0; t < nTokens; t++) {
        let maxLogit = -Infinity;
        for (let s = 0; s < nTokens; s++) {
          let acc = 0;
          for (let d = 0; d < dim; d++) acc += q[t * dim + d] * k[s * dim + d];
          logits[s] = acc * invSqrtDim;
          if (logits[s] > maxLogit) maxLogit = logits[s];
        }
        if (t === 0 && variant === "pre") clsRow.set(logits.subarray(1));
        let z = 0;
        for (let s = 0; s < nTokens; s++) {
          weightsBuf[s] = Math.exp(logits[s] - maxLogit);
          z += weightsBuf[s];
        }
        for (let s = 0; s < nTokens; s++) weightsBuf[s] /= z;
        if (t === 0 && variant === "post") clsRow.set(weightsBuf.subarray(1));
        for (let d = 0; d < dim; d++) {
          let acc = 0;
          for (let s = 0; s < nTokens; s++) acc += weightsBuf[s] * v[s * dim + d];
          next[t * dim + d] += acc;
        }
      }
      x = next;
      attentionMaps.push(clsRow);
    }

    const embedding = new Float64Array(dim);
    let norm = 0;
    for (let d = 0; d < dim; d++) {
      embedding[d] = x[d];
      norm += embedding[d] * embedding[d];
    }
    norm = Math.sqrt(norm);
    if (norm < 1e-12) throw new Error("degenerate embedding");
    for (let d = 0; d < dim; d++) embedding[d] /= norm;
    return { embedding, attention: attentionMaps };
  }

  private tokenStates(image: Image): Float64Array {
    const { inputSize, patchSize, dim } = this.spec;
    const grid = this.gridSize;
    const patchDim = patchSize * patchSize * 3;
    const x = new Float64Array((this.tokens + 1) * dim);
    x.set(this.weights.cls, 0);
    const patch = new Float64Array(patchDim);
    for (let py = 0; py < grid; py++) {
      for (let px = 0; px < grid; px++) {
        let o = 0;
        for (let y = 0; y < patchSize; y++) {
          const iy = py * patchSize + y;
          for (let xx = 0; xx < patchSize; xx++) {
            const ix = px * patchSize + xx;
            const s = (iy * inputSize + ix) * 3;
            patch[o++] = (image.pixels[s] / 255) * 2 - 1;
            patch[o++] = (image.pixels[s + 1] / 255) * 2 - 1;
            patch[o++] = (image.pixels[s + 2] / 255) * 2 - 1;
          }
        }
        const t = 1 + py * grid + px;
        for (let d = 0; d < dim; d++) {
          let acc = this.weights.embedBias[d];
          const row = d * patchDim;
          for (let i = 0; i < patchDim; i++) acc += this.weights.embed[row + i] * patch[i];
          x[t * dim + d] = acc;
        }
      }
    }
    return x;
  }

  private project(x: Float64Array, w: Float64Array, nTokens: number): Float64Array {
    const dim = this.spec.dim;
    const out = new Float64Array(nTokens * dim);
    for (let t = 0; t < nTokens; t++) {
      for (let d = 0; d < dim; d++) {
        let acc = 0;
        const row = d * dim;
        for (let i = 0; i < dim; i++) acc += w[row + i] * x[t * dim + i];
        out[t * dim + d] = acc;
      }
    }
    return out;
  }

  /** Unit text embedding seeded from the class name. */
  encodeText(className: string): Float64Array {
    const rng = new Rng(`${this.spec.name}/text/${className}`);
    const v = rng.gaussArray(this.spec.dim);
    let norm = 0;
    for (const x of v) norm += x * x;
    norm = Math.sqrt(norm);
    for (let i = 0; i < v.length; i++) v[i] /= norm;
    return v;
  }
}

/** Parse a layer spec: "all" or a comma-separated 0-based index list. */
export function parseLayers(spec: string, nLayers: number): number[] {
  if (spec.trim() === "all") return Array.from({ length: nLayers }, (_, i) => i);
  const out = spec.split(",").map((s) => parseInt(s.trim(), 10));
  for (const l of out) {
    if (!Number.isInteger(l) || l < 0 || l >= nLayers) {
      throw new Error(`layer index ${l} outside [0, ${nLayers})`);
    }
  }
  return out;
}

/** Mean of the selected per-layer maps. */
export function averageLayers(maps: Float64Array[], layers: number[]): Float64Array {
  const out = new Float64Array(maps[0].length);
  for (const l of layers) {
    for (let i = 0; i < out.length; i++) out[i] += maps[l][i];
  }
  for (let i = 0; i < out.length; i++) out[i] /= layers.length;
  return out;
}
