"""Pipeline configuration: defaults, key-value config files, flag overrides.

The config file is a plain key-value document: one `key = value` pair per
line, `#` starts a comment, blank lines ignored. Flags override file values,
which override defaults. Integer lists (decay schedules) are comma-separated.
"""

from __future__ import annotations

import math
from pathlib import Path

from .attention import AttentionConfig
from .geometry import JitterConfig
from .infer import InferenceConfig
from .prototype import TrainConfig
from .synth import SynthConfig
from .util import ConfigValueError, MissingInputError


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple:
    t = text.strip()
    if not t:
        return ()
    return tuple(int(part.strip()) for part in t.split(","))


# key -> (parser, default)
SCHEMA: dict = {
    "seed": (int, 7),
    # geometry / jitter
    "alpha": (float, math.log(2.0)),
    "sigma_jitter": (float, 0.15),
    # attention
    "lambda": (float, 10.0),
    "sample_grid": (int, 7),
    # pseudo-labeling
    "k": (int, 20),
    "top_n": (int, 500),
    "filter_iou": (float, 0.5),
    # shared temperature
    "tau": (float, 0.01),
    # inference
    "prototypes_per_class": (int, 2),
    "nms_iou": (float, 0.5),
    "bg_threshold": (float, 0.5),
    "max_detections": (int, 100),
    "score_neglog": (_parse_bool, False),
    # distillation training
    "distill_lr": (float, 0.05),
    "distill_epochs": (int, 20),
    "distill_batch": (int, 32),
    "distill_decay_epochs": (_parse_int_list, (16, 19)),
    # prototype / base classifier training
    "proto_lr": (float, 0.01),
    "proto_epochs": (int, 12),
    "proto_batch": (int, 64),
    "proto_decay_epochs": (_parse_int_list, (8, 11)),
    # synthetic data generation
    "images": (int, 200),
    "image_width": (int, 256),
    "image_height": (int, 256),
    "base_classes": (int, 4),
    "novel_classes": (int, 2),
    "dim": (int, 64),
    "class_separation": (float, math.radians(75.0)),
    "embedding_noise": (float, 0.4),
    "attention_bump_sigma": (float, 12.0),
    "background_proposal_rate": (float, 4.0),
    "extreme_fraction": (float, 0.3),
}


def defaults() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def parse_value(key: str, text: str):
    if key not in SCHEMA:
        raise ConfigValueError(key, "unknown key")
    parser, _ = SCHEMA[key]
    try:
        return parser(text)
    except (ValueError, TypeError) as exc:
        raise ConfigValueError(key, str(exc)) from exc


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(str(p))
    out: dict = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigValueError(
                f"{p.name}:{lineno}", f"expected 'key = value', got {line!r}"
            )
        key, _, value = stripped.partition("=")
        key = key.strip()
        out[key] = parse_value(key, value.strip())
    return out


def build_config(config_path=None, overrides: dict | None = None) -> dict:
    """defaults <- config file <- explicit overrides; values validated."""
    cfg = defaults()
    if config_path is not None:
        cfg.update(load_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in SCHEMA:
            raise ConfigValueError(key, "unknown key")
        cfg[key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    positive = (
        "alpha", "lambda", "tau", "nms_iou",
        "distill_lr", "proto_lr", "class_separation", "attention_bump_sigma",
    )
    for key in positive:
        if not cfg[key] > 0:
            raise ConfigValueError(key, "must be positive")
    at_least_one = (
        "sample_grid", "k", "top_n", "prototypes_per_class", "max_detections",
        "distill_batch", "proto_batch", "base_classes", "novel_classes", "dim",
    )
    for key in at_least_one:
        if cfg[key] < 1:
            raise ConfigValueError(key, "must be >= 1")
    for key in ("sigma_jitter", "embedding_noise", "background_proposal_rate"):
        if cfg[key] < 0:
            raise ConfigValueError(key, "must be >= 0")
    for key in ("distill_epochs", "proto_epochs"):
        if cfg[key] < 0:
            raise ConfigValueError(key, "must be >= 0")
    if not 0 < cfg["nms_iou"] <= 1:
        raise ConfigValueError("nms_iou", "must be in (0, 1]")
    if not 0 <= cfg["filter_iou"] <= 1:
        raise ConfigValueError("filter_iou", "must be in [0, 1]")
    if not 0 <= cfg["bg_threshold"] <= 1:
        raise ConfigValueError("bg_threshold", "must be in [0, 1]")
    if not 0 <= cfg["extreme_fraction"] <= 1:
        raise ConfigValueError("extreme_fraction", "must be in [0, 1]")


def jitter_config(cfg: dict, image_width: int, image_height: int, seed: int) -> JitterConfig:
    return JitterConfig(
        alpha_log_ratio=cfg["alpha"],
        sigma_jitter=cfg["sigma_jitter"],
        seed=seed,
        image_width=image_width,
        image_height=image_height,
    )


def attention_config(cfg: dict) -> AttentionConfig:
    return AttentionConfig(scale_lambda=cfg["lambda"], sample_grid=cfg["sample_grid"])


def inference_config(cfg: dict) -> InferenceConfig:
    return InferenceConfig(
        tau=cfg["tau"],
        prototypes_per_class=cfg["prototypes_per_class"],
        nms_iou=cfg["nms_iou"],
        max_detections_per_image=cfg["max_detections"],
        bg_threshold=cfg["bg_threshold"],
        score_neglog=cfg["score_neglog"],
    )


def distill_train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["distill_lr"],
        epochs=cfg["distill_epochs"],
        batch_size=cfg["distill_batch"],
        tau=cfg["tau"],
        seed=seed,
        lr_decay_epochs=cfg["distill_decay_epochs"],
    )


def proto_train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["proto_lr"],
        epochs=cfg["proto_epochs"],
        batch_size=cfg["proto_batch"],
        tau=cfg["tau"],
        seed=seed,
        lr_decay_epochs=cfg["proto_decay_epochs"],
    )


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(
        seed=cfg["seed"],
        num_images=cfg["images"],
        image_size=(cfg["image_width"], cfg["image_height"]),
        num_base_classes=cfg["base_classes"],
        num_novel_classes=cfg["novel_classes"],
        embedding_dim=cfg["dim"],
        class_separation=cfg["class_separation"],
        embedding_noise=cfg["embedding_noise"],
        attention_bump_sigma=cfg["attention_bump_sigma"],
        background_proposal_rate=cfg["background_proposal_rate"],
        extreme_ratio_fraction=cfg["extreme_fraction"],
    )
