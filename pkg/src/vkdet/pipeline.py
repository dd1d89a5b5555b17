"""Stage orchestration shared by the CLI subcommands and the ablation runner.

Stage order on a dataset directory (either generated synthetically or
ingested through the wire formats):

    select -> augment -> train-distill -> pseudolabel -> train-proto
           -> infer -> eval

Each stage reads its declared inputs, writes fixed-name outputs under the
work directory, and is deterministic given the seed. All per-stage
randomness derives from the single top-level seed via util.stage_seed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import figures, wire
from .attention import AttentionMap, normalize_attention, select_informative
from .distill import DistillHead, apply_head_batch, train_distill
from .embedding import CategorySpace, unit, unit_rows
from .evaluation import evaluate, format_report, pr_points
from .geometry import augment_proposals, iou
from .infer import (
    ALL_COMPONENTS,
    Detection,
    assemble_detections,
    infer_base_image,
    score_tables,
)
from .prototype import (
    ClassifierBank,
    PrototypeBank,
    train_base_background,
    train_prototypes,
)
from .pseudolabel import ClusterModel, kmeans, partition_base, select_top_n
from .synth import generate, load_world
from .util import VkdetError, stage_seed, worker_count

INFORMATIVE_FILE = "informative.tsv"
AUGMENTED_FILE = "augmented.tsv"
AUG_VLM_FILE = "aug_vlm.vkm"
AUG_RAW_FILE = "aug_raw.vkm"
DISTILL_HEAD_FILE = "distill_head.vkm"
DISTILL_TRACE_FILE = "distill_trace.json"
PSEUDO_FILE = "pseudo.tsv"
CENTERS_FILE = "centers.vkm"
REMOVED_FILE = "removed.tsv"
PROTOTYPES_FILE = "prototypes.vkm"
BASE_BANK_FILE = "base_bank.vkm"
PROTO_TRACE_FILE = "proto_trace.json"
DETECTIONS_FILE = "detections.tsv"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"


def _image_order(proposals):
    seen = []
    grouped: dict = {}
    for p in proposals:
        if p.image_id not in grouped:
            grouped[p.image_id] = []
            seen.append(p.image_id)
        grouped[p.image_id].append(p)
    return seen, grouped


def read_meta(data_dir) -> dict:
    return wire.read_json(Path(data_dir) / "meta.json")


def category_space(meta: dict, k_unknown: int) -> CategorySpace:
    return CategorySpace(
        base=list(meta["base_classes"]),
        novel=list(meta["novel_classes"]),
        k_unknown=k_unknown,
    )


def run_synth(cfg: dict, out_dir) -> dict:
    return generate(cfgmod.synth_config(cfg), out_dir)


def run_select(data_dir, work_dir, cfg: dict) -> Path:
    data, work = Path(data_dir), Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    proposals = wire.read_proposals(data / "train" / "proposals.tsv")
    acfg = cfgmod.attention_config(cfg)
    order, grouped = _image_order(proposals)
    kept = []
    for image_id in order:
        attn_path = data / "train" / "attn" / f"{image_id}.vkm"
        grid, img_w, img_h = wire.read_attention(attn_path)
        mask = normalize_attention(
            AttentionMap(grid=grid, image_width=img_w, image_height=img_h), acfg
        )
        kept.extend(select_informative(grouped[image_id], mask, acfg))
    out = work / INFORMATIVE_FILE
    wire.write_proposals(out, kept)
    return out


def run_augment(data_dir, work_dir, cfg: dict) -> Path:
    data, work = Path(data_dir), Path(work_dir)
    meta = read_meta(data)
    informative = wire.read_proposals(work / INFORMATIVE_FILE)
    jcfg = cfgmod.jitter_config(
        cfg, meta["image_width"], meta["image_height"], seed=stage_seed(cfg["seed"], "augment")
    )
    augmented = augment_proposals(informative, jcfg)
    out = work / AUGMENTED_FILE
    wire.write_proposals(out, augmented)

    world = load_world(data)
    ids, vlm = world.embed_proposals(augmented)
    _, raw = world.raw_features(augmented)
    wire.write_matrix(work / AUG_VLM_FILE, vlm, "region", keys=ids)
    wire.write_matrix(work / AUG_RAW_FILE, raw, "raw_feature", keys=ids)
    return out


def run_train_distill(data_dir, work_dir, cfg: dict) -> Path:
    work = Path(work_dir)
    vlm, _, vlm_keys = wire.read_matrix(work / AUG_VLM_FILE, expect_kind="region")
    raw, _, raw_keys = wire.read_matrix(work / AUG_RAW_FILE, expect_kind="raw_feature")
    if vlm_keys != raw_keys:
        raise VkdetError("augmented embedding and feature files are misaligned")
    targets = unit_rows(np.asarray(vlm, dtype=np.float64))
    raws = np.asarray(raw, dtype=np.float64)
    d_out, d_in = targets.shape[1], raws.shape[1]
    head = DistillHead.init_random(d_out, d_in, seed=stage_seed(cfg["seed"], "distill-init"))
    tcfg = cfgmod.distill_train_config(cfg, seed=stage_seed(cfg["seed"], "distill"))
    head, trace = train_distill(head, raws, targets, tcfg)
    out = work / DISTILL_HEAD_FILE
    packed = np.hstack([head.weight, head.bias[:, None]])
    wire.write_matrix(out, packed, "distill_head", extra={"d_out": d_out, "d_in": d_in})
    wire.write_json(
        work / DISTILL_TRACE_FILE,
        {"initial_loss": trace[0], "final_loss": trace[-1], "trace": trace},
    )
    return out


def load_head(path) -> DistillHead:
    packed, header, _ = wire.read_matrix(path, expect_kind="distill_head")
    packed = np.asarray(packed, dtype=np.float64)
    return DistillHead(weight=packed[:, :-1], bias=packed[:, -1])


def run_pseudolabel(data_dir, work_dir, cfg: dict, use_filter: bool = True) -> Path:
    data, work = Path(data_dir), Path(work_dir)
    augmented = wire.read_proposals(work / AUGMENTED_FILE)
    vlm, _, keys = wire.read_matrix(work / AUG_VLM_FILE, expect_kind="region")
    vectors = unit_rows(np.asarray(vlm, dtype=np.float64))
    by_id = {k: i for i, k in enumerate(keys)}

    gt_base = wire.read_ground_truth(data / "train" / "gt.tsv")
    if use_filter:
        kept, removed = partition_base(augmented, gt_base, cfg["filter_iou"])
    else:
        kept, removed = list(augmented), []
    if len(kept) < cfg["k"]:
        raise VkdetError(
            f"only {len(kept)} proposals after base filtering; need k={cfg['k']}"
        )
    kept_ids = [p.proposal_id for p in kept]
    x = vectors[[by_id[i] for i in kept_ids]]
    cm = kmeans(x, cfg["k"], seed=stage_seed(cfg["seed"], "kmeans"))
    pseudo = select_top_n(cm, x, kept_ids, cfg["top_n"])

    out = work / PSEUDO_FILE
    wire.write_pseudo_labels(out, pseudo)
    wire.write_matrix(
        work / CENTERS_FILE,
        cm.centers,
        "cluster_centers",
        keys=[f"unknown-{j + 1}" for j in range(cm.k)],
        extra={"inertia": cm.inertia},
    )
    wire.write_proposals(work / REMOVED_FILE, removed)
    return out


def load_centers(path) -> ClusterModel:
    centers, header, _ = wire.read_matrix(path, expect_kind="cluster_centers")
    centers = np.asarray(centers, dtype=np.float64)
    return ClusterModel(
        centers=centers, k=centers.shape[0], inertia=float(header.get("inertia", 0.0))
    )


def _match_base_labels(proposals, gt_base, iou_thresh: float):
    """(indices, labels) for proposals matched to base classes;
    indices of unmatched proposals separately."""
    by_image: dict = {}
    for g in gt_base:
        by_image.setdefault(g.image_id, []).append(g)
    matched_idx, labels, unmatched_idx = [], [], []
    for i, p in enumerate(proposals):
        best, best_cls = 0.0, None
        for g in by_image.get(p.image_id, ()):
            ov = iou(p.box, g.box)
            if ov > best:
                best, best_cls = ov, g.class_name
        if best >= iou_thresh and best_cls is not None:
            matched_idx.append(i)
            labels.append(best_cls)
        else:
            unmatched_idx.append(i)
    return matched_idx, labels, unmatched_idx


def run_train_proto(data_dir, work_dir, cfg: dict) -> Path:
    data, work = Path(data_dir), Path(work_dir)
    augmented = wire.read_proposals(work / AUGMENTED_FILE)
    raw, _, keys = wire.read_matrix(work / AUG_RAW_FILE, expect_kind="raw_feature")
    head = load_head(work / DISTILL_HEAD_FILE)
    f_roi = apply_head_batch(head, np.asarray(raw, dtype=np.float64))
    by_id = {k: i for i, k in enumerate(keys)}

    pseudo = wire.read_pseudo_labels(work / PSEUDO_FILE)
    cm = load_centers(work / CENTERS_FILE)
    removed = wire.read_proposals(work / REMOVED_FILE)
    removed_rows = (
        f_roi[[by_id[p.proposal_id] for p in removed]] if removed else np.zeros((0, f_roi.shape[1]))
    )
    if len(removed_rows):
        bg_init = removed_rows.mean(axis=0)
        if np.linalg.norm(bg_init) < 1e-9:
            bg_init = removed_rows[0]
    else:
        rng = np.random.default_rng(stage_seed(cfg["seed"], "proto-bg-init"))
        bg_init = rng.standard_normal(f_roi.shape[1])
    bank = PrototypeBank.from_clusters(cm, unit(bg_init))
    tcfg = cfgmod.proto_train_config(cfg, seed=stage_seed(cfg["seed"], "proto"))
    emb_map = {r.proposal_id: f_roi[by_id[r.proposal_id]] for r in pseudo}
    bank, proto_trace = train_prototypes(pseudo, emb_map, bank, tcfg, removed_rows)

    # Base classifier: frozen text rows, learnable background row (trained on
    # proposals matched to base annotations vs a capped unmatched sample).
    text_rows, _, base_names = wire.read_matrix(data / "text_base.vkm", expect_kind="text_base")
    gt_base = wire.read_ground_truth(data / "train" / "gt.tsv")
    matched_idx, labels, unmatched_idx = _match_base_labels(
        augmented, gt_base, cfg["filter_iou"]
    )
    name_to_idx = {n: i for i, n in enumerate(base_names)}
    rng = np.random.default_rng(stage_seed(cfg["seed"], "base-bg"))
    cap = min(len(matched_idx), len(unmatched_idx))
    bg_pick = (
        sorted(rng.choice(len(unmatched_idx), size=cap, replace=False).tolist())
        if cap > 0
        else []
    )
    bg_idx = [unmatched_idx[i] for i in bg_pick]
    feats = np.vstack([f_roi[matched_idx], f_roi[bg_idx]]) if matched_idx or bg_idx else np.zeros((0, f_roi.shape[1]))
    label_ids = np.array(
        [name_to_idx[c] for c in labels] + [len(base_names)] * len(bg_idx), dtype=int
    )
    if len(bg_idx):
        base_bg_init = unit(f_roi[bg_idx].mean(axis=0))
    else:
        rng2 = np.random.default_rng(stage_seed(cfg["seed"], "base-bg-init"))
        base_bg_init = unit(rng2.standard_normal(f_roi.shape[1]))
    base_bank = ClassifierBank.from_text(
        np.asarray(text_rows, dtype=np.float64), base_names, base_bg_init
    )
    base_trace = []
    if len(feats):
        bcfg = cfgmod.proto_train_config(cfg, seed=stage_seed(cfg["seed"], "base-train"))
        base_bank, base_trace = train_base_background((feats, label_ids), base_bank, bcfg)

    out = work / PROTOTYPES_FILE
    proto_keys = [f"unknown-{j + 1}" for j in range(bank.k)] + ["background"]
    wire.write_matrix(out, bank.rows, "prototype", keys=proto_keys)
    wire.write_matrix(
        work / BASE_BANK_FILE,
        base_bank.rows,
        "classifier",
        keys=list(base_names) + ["background"],
    )
    wire.write_json(
        work / PROTO_TRACE_FILE,
        {
            "prototype_trace": proto_trace,
            "base_trace": base_trace,
            "prototype_final": proto_trace[-1] if proto_trace else None,
            "base_final": base_trace[-1] if base_trace else None,
        },
    )
    return out


def load_prototypes(path) -> PrototypeBank:
    rows, _, _ = wire.read_matrix(path, expect_kind="prototype")
    rows = np.asarray(rows, dtype=np.float64)
    return PrototypeBank(rows=rows, trainable=np.ones(rows.shape[0], dtype=bool))


def _val_inputs(data_dir, work_dir):
    data, work = Path(data_dir), Path(work_dir)
    proposals = wire.read_proposals(data / "val" / "proposals.tsv")
    raw, _, keys = wire.read_matrix(data / "val" / "features_raw.vkm", expect_kind="raw_feature")
    head = load_head(work / DISTILL_HEAD_FILE)
    f_roi = apply_head_batch(head, np.asarray(raw, dtype=np.float64))
    by_id = {k: i for i, k in enumerate(keys)}
    novel_rows, _, novel_names = wire.read_matrix(
        data / "text_novel.vkm", expect_kind="text_novel"
    )
    base_rows_bank, _, base_keys = wire.read_matrix(
        work / BASE_BANK_FILE, expect_kind="classifier"
    )
    bank = load_prototypes(work / PROTOTYPES_FILE)
    cm = load_centers(work / CENTERS_FILE)
    return (
        proposals,
        f_roi,
        by_id,
        unit_rows(np.asarray(novel_rows, dtype=np.float64)),
        list(novel_names),
        np.asarray(base_rows_bank, dtype=np.float64),
        base_keys[:-1],
        bank,
        cm,
    )


def run_infer(data_dir, work_dir, cfg: dict, components=ALL_COMPONENTS) -> Path:
    work = Path(work_dir)
    (
        proposals,
        f_roi,
        by_id,
        novel_rows,
        novel_names,
        base_rows,
        base_names,
        bank,
        cm,
    ) = _val_inputs(data_dir, work_dir)
    icfg = cfgmod.inference_config(cfg)
    order, grouped = _image_order(proposals)

    def per_image(image_id):
        props = grouped[image_id]
        feats = f_roi[[by_id[p.proposal_id] for p in props]]
        tables = score_tables(feats, novel_rows, novel_names, bank, cm, icfg)
        novel_dets = assemble_detections(props, tables, novel_names, icfg, components)
        base_dets = infer_base_image(
            props, feats, base_rows, base_names, icfg.tau, icfg.nms_iou,
            icfg.max_detections_per_image,
        )
        merged = sorted(novel_dets + base_dets, key=lambda d: (-d.score, d.proposal_id))
        return merged[: icfg.max_detections_per_image]

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(per_image, order))
    else:
        results = [per_image(i) for i in order]

    detections: list[Detection] = []
    for dets in results:
        detections.extend(dets)
    out = work / DETECTIONS_FILE
    wire.write_detections(out, detections)
    return out


def run_eval(dets_path, gt_path, meta_path, out_dir, cfg: dict) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    detections = wire.read_detections(dets_path)
    gts = wire.read_ground_truth(gt_path)
    meta = wire.read_json(meta_path)
    space = category_space(meta, cfg["k"])
    report = evaluate(detections, gts, space)

    payload = {
        "per_class_ap": report.per_class_ap,
        "map_base": report.map_base,
        "map_novel": report.map_novel,
        "map_all": report.map_all,
        "hm": report.hm,
        "num_detections": len(detections),
        "num_ground_truth": len(gts),
    }
    wire.write_json(out / REPORT_JSON, payload)
    (out / REPORT_TXT).write_text(format_report(report, space), encoding="utf-8")

    curves = {}
    for name in space.novel:
        cls_dets = [d for d in detections if d.class_name == name]
        cls_gts = [g for g in gts if g.class_name == name]
        curves[name] = pr_points(cls_dets, cls_gts)
    figures.save_pr_curves(out / "pr_curves.png", curves)
    figures.save_ap_bars(out / "ap_per_class.png", report.per_class_ap, space.base, space.novel)
    return payload


def run_training_stages(data_dir, work_dir, cfg: dict, use_filter: bool = True) -> None:
    """select -> augment -> train-distill -> pseudolabel -> train-proto."""
    run_select(data_dir, work_dir, cfg)
    run_augment(data_dir, work_dir, cfg)
    run_train_distill(data_dir, work_dir, cfg)
    run_pseudolabel(data_dir, work_dir, cfg, use_filter=use_filter)
    run_train_proto(data_dir, work_dir, cfg)


ABLATION_COMBOS = (
    ("d",),
    ("p",),
    ("d", "p"),
    ("p", "l"),
    ("d", "l"),
    ("d", "p", "l"),
)


def _combo_label(combo) -> str:
    return "+".join(combo)


def run_ablate(data_dir, out_dir, cfg: dict) -> dict:
    """Score-component on/off matrix plus the base-filter on/off comparison."""
    data = Path(data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = read_meta(data)
    space = category_space(meta, cfg["k"])
    gts = wire.read_ground_truth(data / "val" / "gt.tsv")

    def evaluate_variant(work_dir, components):
        run_infer(data, work_dir, cfg, components=components)
        dets = wire.read_detections(Path(work_dir) / DETECTIONS_FILE)
        report = evaluate(dets, gts, space)
        return report

    filtered_work = out / "with_filter"
    run_training_stages(data, filtered_work, cfg, use_filter=True)
    rows = []
    for combo in ABLATION_COMBOS:
        report = evaluate_variant(filtered_work, combo)
        rows.append(
            {
                "components": _combo_label(combo),
                "map_novel": report.map_novel,
                "map_base": report.map_base,
                "map_all": report.map_all,
                "hm": report.hm,
            }
        )

    unfiltered_work = out / "no_filter"
    run_training_stages(data, unfiltered_work, cfg, use_filter=False)
    unfiltered_report = evaluate_variant(unfiltered_work, ALL_COMPONENTS)
    filtered_full = rows[-1]

    payload = {
        "rows": rows,
        "filtering": {
            "with_filter_map_novel": filtered_full["map_novel"],
            "without_filter_map_novel": unfiltered_report.map_novel,
        },
    }
    wire.write_json(out / "ablation.json", payload)

    lines = [f"{'components':<12} {'N':>6} {'B':>6} {'A':>6} {'HM':>6}"]
    lines.append("-" * 40)
    for r in rows:
        lines.append(
            f"{r['components']:<12} {100 * r['map_novel']:6.1f} {100 * r['map_base']:6.1f} "
            f"{100 * r['map_all']:6.1f} {100 * r['hm']:6.1f}"
        )
    lines.append("-" * 40)
    lines.append(
        f"{'filter on':<12} {100 * filtered_full['map_novel']:6.1f}  (novel mAP)"
    )
    lines.append(
        f"{'filter off':<12} {100 * unfiltered_report.map_novel:6.1f}  (novel mAP)"
    )
    (out / "ablation.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    figures.save_ablation_bars(out / "ablation.png", rows)
    return payload
