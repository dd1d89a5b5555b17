"""Subcommand CLI for the detection pipeline.

Exit codes: 0 success, 2 missing input file, 3 format version mismatch,
4 invalid configuration value, 1 any other pipeline error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cfgmod
from . import pipeline
from .util import ConfigValueError, FormatVersionError, MissingInputError, VkdetError

_OVERRIDE_DESTS = {
    "seed": "seed",
    "k": "k",
    "top_n": "top_n",
    "tau": "tau",
    "alpha": "alpha",
    "sigma_jitter": "sigma_jitter",
    "scale_lambda": "lambda",
    "prototypes_per_class": "prototypes_per_class",
    "bg_threshold": "bg_threshold",
    "score_neglog": "score_neglog",
    "images": "images",
    "dim": "dim",
    "embedding_noise": "embedding_noise",
}


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="number of cluster centers")
    p.add_argument("--top-n", dest="top_n", type=int, help="pseudo-labels per center")
    p.add_argument("--tau", type=float, help="softmax temperature")
    p.add_argument("--alpha", type=float, help="log aspect-ratio threshold")
    p.add_argument("--sigma-jitter", dest="sigma_jitter", type=float)
    p.add_argument("--lambda", dest="scale_lambda", type=float, help="attention scaling")
    p.add_argument("--prototypes-per-class", dest="prototypes_per_class", type=int)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float)
    p.add_argument(
        "--score-neglog",
        dest="score_neglog",
        action="store_const",
        const=True,
        default=None,
        help="report literal negative-log scores",
    )
    p.add_argument("--out", required=True, help="output directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vkdet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    _common_flags(p)
    p.add_argument("--images", type=int, help="total images (half train, half val)")
    p.add_argument("--dim", type=int, help="embedding dimension")
    p.add_argument("--embedding-noise", dest="embedding_noise", type=float)

    for name, help_text in (
        ("select", "keep proposals over informative attention regions"),
        ("augment", "jitter extreme-aspect proposals and embed the result"),
        ("train-distill", "fit the distillation head on augmented pairs"),
        ("train-proto", "fit prototype and base classifier banks"),
        ("infer", "score the validation split and write detections"),
        ("ablate", "score-component and filtering ablation report"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)
        p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("pseudolabel", help="filter, cluster, and select pseudo-labels")
    _common_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--no-filter", action="store_true", help="skip base-proposal filtering")

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    _common_flags(p)
    p.add_argument("--dets", required=True, help="detections file")
    p.add_argument("--gt", required=True, help="ground-truth file")
    p.add_argument("--meta", required=True, help="dataset meta.json (category space)")

    return parser


def _config_from_args(args) -> dict:
    overrides = {}
    for dest, key in _OVERRIDE_DESTS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    return cfgmod.build_config(args.config, overrides)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        out = Path(args.out)
        if args.command == "synth":
            manifest = pipeline.run_synth(cfg, out)
            print(f"wrote dataset to {manifest['root']}")
        elif args.command == "select":
            path = pipeline.run_select(args.data, out, cfg)
            print(f"wrote {path}")
        elif args.command == "augment":
            path = pipeline.run_augment(args.data, out, cfg)
            print(f"wrote {path}")
        elif args.command == "train-distill":
            path = pipeline.run_train_distill(args.data, out, cfg)
            print(f"wrote {path}")
        elif args.command == "pseudolabel":
            path = pipeline.run_pseudolabel(
                args.data, out, cfg, use_filter=not args.no_filter
            )
            print(f"wrote {path}")
        elif args.command == "train-proto":
            path = pipeline.run_train_proto(args.data, out, cfg)
            print(f"wrote {path}")
        elif args.command == "infer":
            path = pipeline.run_infer(args.data, out, cfg)
            print(f"wrote {path}")
        elif args.command == "eval":
            payload = pipeline.run_eval(args.dets, args.gt, args.meta, out, cfg)
            print(
                f"N={100 * payload['map_novel']:.1f} B={100 * payload['map_base']:.1f} "
                f"A={100 * payload['map_all']:.1f} HM={100 * payload['hm']:.1f}"
            )
        elif args.command == "ablate":
            payload = pipeline.run_ablate(args.data, out, cfg)
            for row in payload["rows"]:
                print(f"{row['components']}: N={100 * row['map_novel']:.1f}")
        else:  # pragma: no cover
            raise VkdetError(f"unhandled command {args.command!r}")
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except VkdetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
