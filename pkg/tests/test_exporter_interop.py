"""Exporter conformance: the primary consumes the exporter's smoke output.

Requires the TypeScript exporter to have been built and run
(`cd exporter && npm install && npm run smoke`); skipped otherwise.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from vkdet import wire
from vkdet.attention import AttentionConfig, AttentionMap, normalize_attention, select_informative
from vkdet.infer import Detection

EXPORTER = Path(__file__).resolve().parent.parent / "exporter"
SMOKE = EXPORTER / "smoke"
OUT = EXPORTER / "out"

pytestmark = pytest.mark.skipif(
    not (OUT / "embeddings_region.vkm").exists(),
    reason="exporter output not built (cd exporter && npm install && npm run smoke)",
)


def test_embeddings_unit_norm_and_aligned():
    emb, header, keys = wire.read_matrix(OUT / "embeddings_region.vkm", expect_kind="region")
    props = wire.read_proposals(SMOKE / "proposals.tsv")
    assert keys == [p.proposal_id for p in props]
    norms = np.linalg.norm(np.asarray(emb, dtype=np.float64), axis=1)
    assert float(np.abs(norms - 1.0).max()) < 1e-3
    print(f"ACCEPTANCE C10a exporter embeddings: PASS {header['rows']} rows, "
          f"max norm drift {float(np.abs(norms - 1.0).max()):.1e}")


def test_attention_maps_flow_through_selection():
    props = wire.read_proposals(SMOKE / "proposals.tsv")
    by_image = {}
    for p in props:
        by_image.setdefault(p.image_id, []).append(p)
    kept_any = 0
    for image_id, group in by_image.items():
        grid, w, h = wire.read_attention(OUT / "attn" / f"{image_id}.vkm")
        mask = normalize_attention(
            AttentionMap(grid=grid, image_width=w, image_height=h), AttentionConfig()
        )
        kept_any += len(select_informative(group, mask, AttentionConfig()))
    assert kept_any > 0
    print(f"ACCEPTANCE C10b exporter attention: PASS {len(by_image)} maps readable")


def test_eval_completes_on_smoke_corpus(tmp_path):
    emb, _, keys = wire.read_matrix(OUT / "embeddings_region.vkm")
    emb = np.asarray(emb, dtype=np.float64)
    by_key = {k: emb[i] for i, k in enumerate(keys)}
    tb, _, base_names = wire.read_matrix(OUT / "text_base.vkm", expect_kind="text_base")
    tn, _, novel_names = wire.read_matrix(OUT / "text_novel.vkm", expect_kind="text_novel")
    rows = np.vstack([np.asarray(tb, dtype=np.float64), np.asarray(tn, dtype=np.float64)])
    names = list(base_names) + list(novel_names)

    props = wire.read_proposals(SMOKE / "proposals.tsv")
    dets = []
    for p in props:
        sims = rows @ by_key[p.proposal_id]
        j = int(sims.argmax())
        dets.append(
            Detection(
                image_id=p.image_id, class_name=names[j], box=p.box,
                score=p.objectness, score_d=float(sims[j]), score_p=float(sims[j]),
                score_l=p.objectness, proposal_id=p.proposal_id,
            )
        )
    dets_path = tmp_path / "detections.tsv"
    wire.write_detections(dets_path, dets)
    meta_path = tmp_path / "meta.json"
    meta_path.write_text(json.dumps({
        "format_version": wire.FORMAT_VERSION,
        "base_classes": list(base_names),
        "novel_classes": list(novel_names),
    }))
    out = tmp_path / "report"
    r = subprocess.run(
        [sys.executable, "-m", "vkdet.cli", "eval",
         "--dets", str(dets_path), "--gt", str(SMOKE / "gt.tsv"),
         "--meta", str(meta_path), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert r.returncode == 0, r.stderr
    payload = json.loads((out / "report.json").read_text())
    assert 0.0 <= payload["hm"] <= 1.0
    print(f"ACCEPTANCE C10c exporter-to-eval: PASS {r.stdout.strip()}")
