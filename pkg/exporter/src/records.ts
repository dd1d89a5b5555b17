/** Newline-delimited, tab-separated proposal records.
 *
 * Six required fields (image_id x1 y1 x2 y2 objectness) plus two optional
 * trailing fields (proposal_id role). Missing ids default to
 * `<image_id>#<ordinal>` in per-image order of appearance, matching the
 * consumer's derivation rule.
 */

import * as fs from "node:fs";

export interface Proposal {
  imageId: string;
  x1: number;
  y1: number;
  x2: number;
  y2: number;
  objectness: number;
  proposalId: string;
  role: string;
}

export function readProposals(path: string): Proposal[] {
  const out: Proposal[] = [];
  const counters = new Map<string, number>();
  const lines = fs.readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, idx) => {
    if (!line) return;
    const f = line.split("\t");
    if (f.length !== 6 && f.length !== 8) {
      throw new Error(`${path}:${idx + 1}: expected 6 or 8 fields, got ${f.length}`);
    }
    const nums = f.slice(1, 6).map((v) => {
      const x = Number(v);
      if (!Number.isFinite(x)) throw new Error(`${path}:${idx + 1}: bad number ${v}`);
      return x;
    });
    let proposalId: string;
    let role: string;
    if (f.length === 8) {
      proposalId = f[6];
      role = f[7];
    } else {
      const n = counters.get(f[0]) ?? 0;
      counters.set(f[0], n + 1);
      proposalId = `${f[0]}#${n}`;
      role = "raw";
    }
    out.push({
      imageId: f[0],
      x1: nums[0],
      y1: nums[1],
      x2: nums[2],
      y2: nums[3],
      objectness: nums[4],
      proposalId,
      role,
    });
  });
  return out;
}
