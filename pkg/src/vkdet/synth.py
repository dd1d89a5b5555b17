"""Synthetic benchmark generator with planted scenes.

Scenes are metadata, not rendered pixels: each image carries ground-truth
boxes for base and novel classes, class-agnostic proposals with objectness
(best IoU against the planted objects plus noise), a low-resolution
attention grid with Gaussian bumps at object centers, and unit-norm
embeddings.

Class semantics live in embedding space. Class directions share a common
component so generic pairs meet at the configured separation angle, and a
background direction is orthogonal to all of them. Aerial imagery shows
strong local appearance overlap across categories, and the benchmark plants
the failure modes that follow from it:

* a sibling pair: one base class direction sits close to one novel class
  (fixed cosine), modeling a look-alike category pair;
* text bias: class text embeddings are not the visual modes themselves.
  Novel text vectors sit at a fixed cosine from their own visual mode, and
  the siblinged novel text leans closer to the look-alike base class's
  visual mode than to its own, so text-guided matching latches onto base
  feature clusters whenever base proposals survive into the clustering
  pool;
* clutter patches: background regions whose embeddings mimic a novel class
  at full object fidelity but with near-zero objectness and no attention
  bump, so similarity evidence alone cannot separate them from objects;
* salient stuff patches: attention-active background regions (woods,
  housing, roads) with their own embedding modes and near-zero objectness,
  populating the unlabeled-unknown world far beyond the novel classes.

A proposal overlapping a planted object (IoU >= 0.5) embeds near its class
direction; one overlapping a clutter or stuff patch embeds near that
patch's direction; anything else embeds near the background direction with
twice the noise. Raw detector descriptors are a hidden rotation of
independently re-noised semantics, so an affine head can map them back into
the embedding space.

The generated tree doubles as the wire-format conformance fixture: every
file uses the exact formats the ingestion path reads. Training-split ground
truth lists only base classes; novel objects still exist in those scenes
(and in their attention maps and embeddings), mirroring unlabeled data. The
world files (directions, rotation, scenes.json) are generator state used to
stand in for the encoder when later stages need embeddings of new boxes;
pipeline stages never read them for supervision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import GroundTruthBox
from .geometry import BBox, Proposal, ROLE_RAW, iou
from .util import FormatVersionError, VkdetError, derive_rng
from . import wire

BACKGROUND_KEY = "__background__"

_BG_NOISE_MULT = 2.0
_OBJECTNESS_NOISE = 0.03
_ATTN_BASE = -0.3
_ATTN_BASE_NOISE = 0.02
_ATTN_AMPLITUDE = 0.8
_ATTN_STRIDE = 16
_SEMANTIC_IOU = 0.5
_SIBLING_COSINE = 0.8  # look-alike base class vs its novel counterpart (visual)
_NUM_SIBLING_PAIRS = 1
_TEXT_ALIGN_NOVEL = 0.65  # cosine of novel text to its own visual mode
_TEXT_SIBLING_BIAS = 0.75  # cosine of siblinged novel text to the base mode
_CLUTTER_RATE = 3.0  # expected look-alike background patches per image
_STUFF_MODES = 12  # distinct salient background appearance modes
_STUFF_RATE = 3.0  # expected salient stuff patches per image
_NOVEL_INSTANCE_FRACTION = 0.5


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    num_images: int = 200
    image_size: tuple = (256, 256)
    num_base_classes: int = 4
    num_novel_classes: int = 2
    embedding_dim: int = 64
    class_separation: float = math.radians(75.0)
    embedding_noise: float = 0.4
    attention_bump_sigma: float = 12.0
    background_proposal_rate: float = 4.0
    extreme_ratio_fraction: float = 0.3

    def __post_init__(self):
        n_classes = self.num_base_classes + self.num_novel_classes
        if self.embedding_dim < n_classes + self.num_novel_classes + 2:
            raise VkdetError(
                "embedding_dim must be at least num classes + num novel + 2"
            )
        if not 0 < self.class_separation <= math.pi / 2:
            raise VkdetError("class_separation must be in (0, pi/2]")
        if math.cos(self.class_separation) >= 0.9:
            raise VkdetError("class_separation too small: pairwise cosine >= 0.9")
        if self.num_images < 2:
            raise VkdetError("need at least 2 images (train and val splits)")
        if not 0 <= self.extreme_ratio_fraction <= 1:
            raise VkdetError("extreme_ratio_fraction must be in [0, 1]")
        if self.embedding_noise < 0 or self.background_proposal_rate < 0:
            raise VkdetError("noise and proposal rate must be non-negative")
        if self.attention_bump_sigma <= 0:
            raise VkdetError("attention_bump_sigma must be positive")
        if min(self.image_size) < 160:
            raise VkdetError("image_size must be at least 160 px per side")


@dataclass(frozen=True)
class SynthObject:
    class_name: str
    box: BBox


@dataclass
class SynthScene:
    image_id: str
    split: str
    objects: list
    clutter: list = field(default_factory=list)  # look-alike background patches
    stuff: list = field(default_factory=list)  # salient non-object regions


@dataclass
class SynthWorld:
    """Generator state: the deterministic encoder surrogate."""

    seed: int
    image_width: int
    image_height: int
    embedding_noise: float
    base_names: list
    novel_names: list
    directions: dict  # visual appearance modes (and BACKGROUND_KEY)
    rotation: np.ndarray
    scenes: dict  # image_id -> SynthScene
    text_directions: dict = field(default_factory=dict)

    def semantics(self, image_id: str, box: BBox) -> tuple[str, float]:
        """(appearance key, noise scale) for a box.

        Real objects take precedence, then clutter and stuff patches; all
        render at object noise. Everything else is background at doubled
        noise.
        """
        scene = self.scenes[image_id]
        best, best_cls = 0.0, BACKGROUND_KEY
        for obj in scene.objects:
            ov = iou(box, obj.box)
            if ov > best:
                best, best_cls = ov, obj.class_name
        if best >= _SEMANTIC_IOU:
            return best_cls, self.embedding_noise
        best_cl, cls_cl = 0.0, None
        for patch in list(scene.clutter) + list(scene.stuff):
            ov = iou(box, patch.box)
            if ov > best_cl:
                best_cl, cls_cl = ov, patch.class_name
        if best_cl >= _SEMANTIC_IOU and cls_cl is not None:
            return cls_cl, self.embedding_noise
        return BACKGROUND_KEY, self.embedding_noise * _BG_NOISE_MULT

    def _noisy_direction(self, name: str, scale: float, stream: str, pid: str) -> np.ndarray:
        direction = self.directions[name]
        if scale == 0.0:
            return direction.copy()
        rng = derive_rng(self.seed, stream, pid)
        g = rng.standard_normal(direction.shape[0])
        g /= np.linalg.norm(g)
        v = direction + scale * g
        return v / np.linalg.norm(v)

    def vlm_embedding(self, p: Proposal) -> np.ndarray:
        name, scale = self.semantics(p.image_id, p.box)
        return self._noisy_direction(name, scale, "vlm", p.proposal_id)

    def raw_feature(self, p: Proposal) -> np.ndarray:
        name, scale = self.semantics(p.image_id, p.box)
        clean = self._noisy_direction(name, scale, "raw", p.proposal_id)
        return self.rotation.T @ clean

    def embed_proposals(self, proposals: list[Proposal]) -> tuple[list, np.ndarray]:
        ids = [p.proposal_id for p in proposals]
        mat = np.stack([self.vlm_embedding(p) for p in proposals]) if proposals else np.zeros((0, 1))
        return ids, mat

    def raw_features(self, proposals: list[Proposal]) -> tuple[list, np.ndarray]:
        ids = [p.proposal_id for p in proposals]
        mat = np.stack([self.raw_feature(p) for p in proposals]) if proposals else np.zeros((0, 1))
        return ids, mat


def _orthonormal(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    g = rng.standard_normal((dim, rows))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))[None, :]  # canonical signs
    return q.T


def _f32(v: np.ndarray) -> np.ndarray:
    # world state round-trips through float32 files; use the stored precision
    return v.astype(np.float32).astype(np.float64)


def stuff_mode_count(cfg: SynthConfig) -> int:
    n_classes = cfg.num_base_classes + cfg.num_novel_classes
    used = n_classes + cfg.num_novel_classes + 2  # class, text-residual, shared, bg
    return max(0, min(_STUFF_MODES, cfg.embedding_dim - used))


def stuff_names(cfg: SynthConfig) -> list:
    return [f"stuff-{i + 1}" for i in range(stuff_mode_count(cfg))]


def _semantic_directions(
    cfg: SynthConfig, base_names: list, novel_names: list
) -> tuple[dict, dict]:
    """(visual, text) unit directions for classes, stuff modes, background.

    Visual: generic pairs meet at the configured separation angle, except
    that _NUM_SIBLING_PAIRS base classes sit at cosine _SIBLING_COSINE to
    their novel counterparts; the background direction is orthogonal to
    everything.

    Text: base text equals the base visual mode (supervised alignment).
    Novel text is offset to cosine _TEXT_ALIGN_NOVEL from its own visual
    mode, and the siblinged novel text additionally leans to cosine
    _TEXT_SIBLING_BIAS toward the look-alike base mode.
    """
    rng = derive_rng(cfg.seed, "directions")
    n_base, n_novel = len(base_names), len(novel_names)
    n_sib = min(_NUM_SIBLING_PAIRS, n_base, n_novel)
    stuff = stuff_names(cfg)
    n_axes = 2 + n_novel + n_base + len(stuff) + n_novel
    basis = _orthonormal(rng, n_axes, cfg.embedding_dim)
    shared = basis[0]
    cos_sep = math.cos(cfg.class_separation)
    axes = iter(range(1, n_axes - 1))

    def generic() -> np.ndarray:
        v = math.sqrt(cos_sep) * shared + math.sqrt(1.0 - cos_sep) * basis[next(axes)]
        return v / np.linalg.norm(v)

    visual = {}
    for name in novel_names:
        visual[name] = generic()
    for j, name in enumerate(base_names):
        if j < n_sib:  # look-alike pair along an orthogonal offset
            v = _SIBLING_COSINE * visual[novel_names[j]] + math.sqrt(
                1.0 - _SIBLING_COSINE**2
            ) * basis[next(axes)]
            visual[name] = v / np.linalg.norm(v)
        else:
            visual[name] = generic()
    for name in stuff:
        visual[name] = generic()

    text = {name: visual[name] for name in base_names}
    for j, name in enumerate(novel_names):
        w = basis[next(axes)]  # residual axis orthogonal to all visual modes
        a = _TEXT_ALIGN_NOVEL
        if j < n_sib:
            c, b = _SIBLING_COSINE, _TEXT_SIBLING_BIAS
            alpha = (a - c * b) / (1.0 - c * c)
            beta = (b - c * a) / (1.0 - c * c)
            gamma_sq = 1.0 - (alpha * alpha + beta * beta + 2 * alpha * beta * c)
            if gamma_sq <= 0:
                raise VkdetError("text bias geometry infeasible")
            t = (
                alpha * visual[name]
                + beta * visual[base_names[j]]
                + math.sqrt(gamma_sq) * w
            )
        else:
            t = a * visual[name] + math.sqrt(1.0 - a * a) * w
        text[name] = t / np.linalg.norm(t)

    visual = {k: _f32(v) for k, v in visual.items()}
    visual[BACKGROUND_KEY] = _f32(basis[-1])  # orthogonal to every other axis
    text = {k: _f32(v) for k, v in text.items()}
    return visual, text


def _rotation(cfg: SynthConfig) -> np.ndarray:
    rng = derive_rng(cfg.seed, "rotation")
    g = rng.standard_normal((cfg.embedding_dim, cfg.embedding_dim))
    q, r = np.linalg.qr(g)
    return _f32(q * np.sign(np.diag(r))[None, :])


def _random_box(
    rng: np.random.Generator, width: int, height: int, extreme: bool
) -> BBox:
    base = rng.uniform(24.0, 64.0)
    ratio = rng.uniform(2.2, 5.0) if extreme else rng.uniform(1.0, 1.8)
    w = base * math.sqrt(ratio)
    h = base / math.sqrt(ratio)
    if rng.random() < 0.5:
        w, h = h, w
    cx = rng.uniform(w / 2 + 2, width - w / 2 - 2)
    cy = rng.uniform(h / 2 + 2, height - h / 2 - 2)
    return BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _plant_objects(
    cfg: SynthConfig, rng: np.random.Generator, base_names: list, novel_names: list
) -> list:
    width, height = cfg.image_size
    objects = []
    for _ in range(int(rng.integers(2, 7))):
        if rng.random() < _NOVEL_INSTANCE_FRACTION:
            name = novel_names[int(rng.integers(len(novel_names)))]
        else:
            name = base_names[int(rng.integers(len(base_names)))]
        extreme = rng.random() < cfg.extreme_ratio_fraction
        objects.append(SynthObject(name, _random_box(rng, width, height, extreme)))
    return objects


def _plant_clutter(
    cfg: SynthConfig, rng: np.random.Generator, novel_names: list
) -> list:
    """Background patches that mimic novel-class appearance."""
    width, height = cfg.image_size
    patches = []
    for _ in range(int(rng.poisson(_CLUTTER_RATE))):
        name = novel_names[int(rng.integers(len(novel_names)))]
        patches.append(SynthObject(name, _random_box(rng, width, height, extreme=False)))
    return patches


def _plant_stuff(cfg: SynthConfig, rng: np.random.Generator, modes: list) -> list:
    """Salient non-object regions with their own appearance modes."""
    if not modes:
        return []
    width, height = cfg.image_size
    patches = []
    for _ in range(int(rng.poisson(_STUFF_RATE))):
        name = modes[int(rng.integers(len(modes)))]
        patches.append(SynthObject(name, _random_box(rng, width, height, extreme=False)))
    return patches


def _jitter_box(box: BBox, rng: np.random.Generator, width: int, height: int, loose: bool) -> BBox:
    w, h = box.width, box.height
    cx, cy = box.center
    if loose:
        scale = rng.uniform(0.85, 1.25)
        cx += rng.uniform(0.1, 0.25) * w * (1 if rng.random() < 0.5 else -1)
        cy += rng.uniform(0.1, 0.25) * h * (1 if rng.random() < 0.5 else -1)
        w, h = w * scale, h * scale
    else:
        cx += rng.uniform(-0.03, 0.03) * w
        cy += rng.uniform(-0.03, 0.03) * h
        w *= 1.0 + rng.uniform(-0.06, 0.06)
        h *= 1.0 + rng.uniform(-0.06, 0.06)
    x1 = max(cx - w / 2, 0.0)
    y1 = max(cy - h / 2, 0.0)
    x2 = min(cx + w / 2, float(width))
    y2 = min(cy + h / 2, float(height))
    return BBox(x1, y1, max(x2, x1 + 1.0), max(y2, y1 + 1.0))


def _scene_proposals(
    cfg: SynthConfig, rng: np.random.Generator, scene: SynthScene
) -> list[Proposal]:
    width, height = cfg.image_size
    boxes: list[BBox] = []
    for obj in scene.objects:
        boxes.append(_jitter_box(obj.box, rng, width, height, loose=False))
        boxes.append(_jitter_box(obj.box, rng, width, height, loose=True))
    for patch in scene.clutter:
        boxes.append(_jitter_box(patch.box, rng, width, height, loose=False))
    for patch in scene.stuff:
        boxes.append(_jitter_box(patch.box, rng, width, height, loose=False))
    for _ in range(int(rng.poisson(cfg.background_proposal_rate))):
        w = rng.uniform(20.0, 80.0)
        h = rng.uniform(20.0, 80.0)
        cx = rng.uniform(w / 2, width - w / 2)
        cy = rng.uniform(h / 2, height - h / 2)
        boxes.append(BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))

    out = []
    for idx, box in enumerate(boxes):
        best = max((iou(box, o.box) for o in scene.objects), default=0.0)
        objectness = float(np.clip(best + rng.normal(0.0, _OBJECTNESS_NOISE), 0.0, 1.0))
        out.append(
            Proposal(
                image_id=scene.image_id,
                box=box,
                objectness=objectness,
                proposal_id=f"{scene.image_id}#{idx}",
                role=ROLE_RAW,
            )
        )
    return out


def _attention_grid(cfg: SynthConfig, rng: np.random.Generator, scene: SynthScene) -> np.ndarray:
    width, height = cfg.image_size
    gw = max(4, width // _ATTN_STRIDE)
    gh = max(4, height // _ATTN_STRIDE)
    # grid node (r, c) sits at image coords (c * (W-1)/(gw-1), r * (H-1)/(gh-1))
    xs = np.arange(gw) * (width - 1) / (gw - 1)
    ys = np.arange(gh) * (height - 1) / (gh - 1)
    gx, gy = np.meshgrid(xs, ys)
    grid = _ATTN_BASE + _ATTN_BASE_NOISE * rng.standard_normal((gh, gw))
    for obj in list(scene.objects) + list(scene.stuff):  # salient regions
        cx, cy = obj.box.center
        sx = max(cfg.attention_bump_sigma, 0.35 * obj.box.width)
        sy = max(cfg.attention_bump_sigma, 0.35 * obj.box.height)
        grid = grid + _ATTN_AMPLITUDE * np.exp(
            -((gx - cx) ** 2 / (2 * sx * sx) + (gy - cy) ** 2 / (2 * sy * sy))
        )
    return grid


def build_world(cfg: SynthConfig) -> SynthWorld:
    """Plant every scene; pure function of the config."""
    base_names = [f"base-{i + 1}" for i in range(cfg.num_base_classes)]
    novel_names = [f"novel-{i + 1}" for i in range(cfg.num_novel_classes)]
    directions, text_directions = _semantic_directions(cfg, base_names, novel_names)
    rotation = _rotation(cfg)
    modes = stuff_names(cfg)
    n_train = cfg.num_images // 2
    scenes = {}
    for i in range(cfg.num_images):
        image_id = f"img{i:04d}"
        split = "train" if i < n_train else "val"
        rng = derive_rng(cfg.seed, "scene", i)
        scenes[image_id] = SynthScene(
            image_id=image_id,
            split=split,
            objects=_plant_objects(cfg, rng, base_names, novel_names),
            clutter=_plant_clutter(cfg, rng, novel_names),
            stuff=_plant_stuff(cfg, rng, modes),
        )
    return SynthWorld(
        seed=cfg.seed,
        image_width=cfg.image_size[0],
        image_height=cfg.image_size[1],
        embedding_noise=cfg.embedding_noise,
        base_names=base_names,
        novel_names=novel_names,
        directions=directions,
        rotation=rotation,
        scenes=scenes,
        text_directions=text_directions,
    )


def _box_entry(o: SynthObject) -> dict:
    return {
        "class": o.class_name,
        "x1": o.box.x1,
        "y1": o.box.y1,
        "x2": o.box.x2,
        "y2": o.box.y2,
    }


def _parse_box_entry(o: dict) -> SynthObject:
    return SynthObject(o["class"], BBox(o["x1"], o["y1"], o["x2"], o["y2"]))


def generate(cfg: SynthConfig, out_dir) -> dict:
    """Write the full dataset tree; returns a manifest of paths."""
    out = Path(out_dir)
    world = build_world(cfg)
    all_names = world.base_names + world.novel_names

    for split in ("train", "val"):
        (out / split / "attn").mkdir(parents=True, exist_ok=True)

    dir_keys = all_names + stuff_names(cfg) + [BACKGROUND_KEY]
    wire.write_matrix(
        out / "directions.vkm",
        np.stack([world.directions[k] for k in dir_keys]),
        "directions",
        keys=dir_keys,
    )
    wire.write_matrix(out / "rotation.vkm", world.rotation, "rotation")
    wire.write_matrix(
        out / "text_base.vkm",
        np.stack([world.text_directions[k] for k in world.base_names]),
        "text_base",
        keys=world.base_names,
    )
    wire.write_matrix(
        out / "text_novel.vkm",
        np.stack([world.text_directions[k] for k in world.novel_names]),
        "text_novel",
        keys=world.novel_names,
    )

    scenes_payload = {}
    split_ids = {"train": [], "val": []}
    for image_id in sorted(world.scenes):
        scene = world.scenes[image_id]
        split_ids[scene.split].append(image_id)
        scenes_payload[image_id] = {
            "split": scene.split,
            "objects": [_box_entry(o) for o in scene.objects],
            "clutter": [_box_entry(p) for p in scene.clutter],
            "stuff": [_box_entry(p) for p in scene.stuff],
        }
    wire.write_json(out / "scenes.json", scenes_payload)

    for split in ("train", "val"):
        proposals: list[Proposal] = []
        gts: list[GroundTruthBox] = []
        for image_id in split_ids[split]:
            scene = world.scenes[image_id]
            rng = derive_rng(cfg.seed, "proposals", image_id)
            proposals.extend(_scene_proposals(cfg, rng, scene))
            attn_rng = derive_rng(cfg.seed, "attention", image_id)
            grid = _attention_grid(cfg, attn_rng, scene)
            wire.write_attention(
                out / split / "attn" / f"{image_id}.vkm",
                grid,
                cfg.image_size[0],
                cfg.image_size[1],
            )
            for o in scene.objects:
                if split == "train" and o.class_name in world.novel_names:
                    continue  # novel objects exist unlabeled in training scenes
                gts.append(GroundTruthBox(image_id=image_id, box=o.box, class_name=o.class_name))
        wire.write_proposals(out / split / "proposals.tsv", proposals)
        wire.write_ground_truth(out / split / "gt.tsv", gts)
        ids, vlm = world.embed_proposals(proposals)
        _, raw = world.raw_features(proposals)
        wire.write_matrix(out / split / "embeddings_vlm.vkm", vlm, "region", keys=ids)
        wire.write_matrix(out / split / "features_raw.vkm", raw, "raw_feature", keys=ids)

    meta = {
        "format_version": wire.FORMAT_VERSION,
        "seed": cfg.seed,
        "image_width": cfg.image_size[0],
        "image_height": cfg.image_size[1],
        "embedding_dim": cfg.embedding_dim,
        "base_classes": world.base_names,
        "novel_classes": world.novel_names,
        "num_images": cfg.num_images,
        "num_train": len(split_ids["train"]),
        "num_val": len(split_ids["val"]),
        "embedding_noise": cfg.embedding_noise,
        "class_separation": cfg.class_separation,
        "attention_bump_sigma": cfg.attention_bump_sigma,
        "background_proposal_rate": cfg.background_proposal_rate,
        "extreme_ratio_fraction": cfg.extreme_ratio_fraction,
    }
    wire.write_json(out / "meta.json", meta)
    return {"root": str(out), "meta": str(out / "meta.json")}


def load_world(data_dir) -> SynthWorld:
    """Rebuild the encoder surrogate from an on-disk dataset."""
    root = Path(data_dir)
    meta = wire.read_json(root / "meta.json")
    if meta.get("format_version") != wire.FORMAT_VERSION:
        raise FormatVersionError(
            f"{root / 'meta.json'}: format version {meta.get('format_version')!r}"
        )
    dirs_mat, _, dir_keys = wire.read_matrix(root / "directions.vkm", expect_kind="directions")
    rotation, _, _ = wire.read_matrix(root / "rotation.vkm", expect_kind="rotation")
    scenes_payload = wire.read_json(root / "scenes.json")
    scenes = {}
    for image_id, entry in scenes_payload.items():
        scenes[image_id] = SynthScene(
            image_id=image_id,
            split=entry["split"],
            objects=[_parse_box_entry(o) for o in entry["objects"]],
            clutter=[_parse_box_entry(p) for p in entry.get("clutter", [])],
            stuff=[_parse_box_entry(p) for p in entry.get("stuff", [])],
        )
    directions = {k: np.asarray(dirs_mat[i], dtype=np.float64) for i, k in enumerate(dir_keys)}
    text_directions = {}
    for fname, kind in (("text_base.vkm", "text_base"), ("text_novel.vkm", "text_novel")):
        mat, _, keys = wire.read_matrix(root / fname, expect_kind=kind)
        for i, k in enumerate(keys):
            text_directions[k] = np.asarray(mat[i], dtype=np.float64)
    return SynthWorld(
        seed=int(meta["seed"]),
        image_width=int(meta["image_width"]),
        image_height=int(meta["image_height"]),
        embedding_noise=float(meta["embedding_noise"]),
        base_names=list(meta["base_classes"]),
        novel_names=list(meta["novel_classes"]),
        directions=directions,
        rotation=np.asarray(rotation, dtype=np.float64),
        scenes=scenes,
        text_directions=text_directions,
    )
