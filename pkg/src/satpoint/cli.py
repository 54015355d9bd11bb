"""Command-line interface.

Subcommands:
    fidt    precompute localization target maps for a dataset directory
    synth   generate a synthetic annotated dataset
    train   fit the localizer on an annotated directory
    eval    score a checkpoint against annotated data
    infer   run (tiled) inference on one image and write detections JSON
    ablate  run the four-configuration component study

Relative output paths resolve under $SATPOINT_OUTPUT_ROOT when that is
set. Commands exit 0 on success; any failure prints one JSON object
{"error": <exception type>, "message": <text>} to stderr and exits 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .data import (SynthConfig, load_dataset, load_image, merge_detections,
                   synth_dataset, save_patch, tile_for_inference,
                   write_manifest)
from .decode import decode_location_map
from .fidt import (DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_C, fidt_map,
                   write_fidt)

OUTPUT_ROOT_ENV = "SATPOINT_OUTPUT_ROOT"


def resolve_out(path) -> Path:
    """Anchor relative output paths under $SATPOINT_OUTPUT_ROOT if set."""
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


# ---------------------------------------------------------------------------
# commands


def cmd_fidt(args) -> int:
    patches = load_dataset(args.data, args.manifest)
    out_dir = resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for patch in patches:
        target = fidt_map(patch.points, alpha=args.alpha, beta=args.beta, c=args.c)
        write_fidt(out_dir / f"{patch.id}.fidt", target)
    write_manifest(out_dir, [p.id for p in patches])
    _emit({"maps": len(patches), "out_dir": str(out_dir)})
    return 0


def cmd_synth(args) -> int:
    config = SynthConfig(
        height=args.height,
        width=args.width,
        n_points=(args.min_points, args.max_points),
        blob_contrast=(args.contrast[0], args.contrast[1]),
        background=args.background,
        clutter_density=args.clutter_density,
        noise_sigma=args.noise_sigma,
        min_separation=args.min_separation,
        seed=args.seed,
    )
    patches = synth_dataset(config, args.count)
    out_dir = resolve_out(args.out)
    for patch in patches:
        save_patch(patch, out_dir)
    write_manifest(out_dir, [p.id for p in patches])
    _emit({"patches": len(patches), "out_dir": str(out_dir)})
    return 0


def _run_config_from_args(args):
    config = load_config(args.config, args.set or ())
    if args.data:
        config = dataclasses.replace(config, data_dir=args.data)
    if args.out:
        config = dataclasses.replace(config, out_dir=str(resolve_out(args.out)))
    else:
        config = dataclasses.replace(config, out_dir=str(resolve_out(config.out_dir)))
    return config


def cmd_train(args) -> int:
    from .training import run_training

    result = run_training(_run_config_from_args(args))
    _emit(result)
    return 0


def cmd_eval(args) -> int:
    from .training import (evaluate_patches, load_checkpoint, _norm_from_meta,
                           write_evaluation)

    model, meta = load_checkpoint(args.checkpoint)
    mean, std = _norm_from_meta(meta)
    patches = load_dataset(args.data, args.manifest)
    summary, per_image = evaluate_patches(model, patches, mean, std, args.gamma)
    out_dir = resolve_out(args.out)
    paths = write_evaluation(out_dir, summary, per_image)
    summary["artifacts"] = paths
    _emit(summary)
    return 0


def _draw_overlay(image, detections, path) -> None:
    from PIL import Image, ImageDraw

    from .fidt import round_half_up

    rgb = np.clip(round_half_up(image * 255.0), 0, 255).astype(np.uint8)
    im = Image.fromarray(np.transpose(rgb, (1, 2, 0)), mode="RGB")
    draw = ImageDraw.Draw(im)
    arm = 3
    for det in detections:
        draw.line([(det.col - arm, det.row), (det.col + arm, det.row)],
                  fill=(255, 32, 32))
        draw.line([(det.col, det.row - arm), (det.col, det.row + arm)],
                  fill=(255, 32, 32))
    im.save(path)


def cmd_infer(args) -> int:
    from .training import load_checkpoint, predict_map, _norm_from_meta

    model, meta = load_checkpoint(args.checkpoint)
    mean, std = _norm_from_meta(meta)
    image = load_image(args.image)
    _, height, width = image.shape

    tile_results = []
    for tile, row0, col0 in tile_for_inference(image, args.tile, args.overlap):
        located = decode_location_map(predict_map(model, tile, mean, std))
        tile_results.append((located, row0, col0))
    merged = merge_detections(tile_results, height, width)

    out_path = resolve_out(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    merged.save(out_path)
    if args.overlay:
        overlay_path = resolve_out(args.overlay)
        overlay_path.parent.mkdir(parents=True, exist_ok=True)
        _draw_overlay(image, merged, overlay_path)
    _emit({"detections": len(merged), "tiles": len(tile_results),
           "out": str(out_path)})
    return 0


def cmd_ablate(args) -> int:
    from .training import run_ablation

    table = run_ablation(_run_config_from_args(args))
    _emit(table)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satpoint",
        description="Point-supervised localization of small objects in overhead imagery.",
    )
    parser.add_argument("--version", action="version", version=f"satpoint {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fidt", help="precompute target maps for a dataset")
    p.add_argument("--data", required=True, help="dataset directory (PNG + JSON sidecars)")
    p.add_argument("--out", required=True, help="output directory for .fidt files")
    p.add_argument("--manifest", default=None, help="optional manifest path")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--c", type=float, default=DEFAULT_C)
    p.set_defaults(func=cmd_fidt)

    p = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--min-points", type=int, default=5)
    p.add_argument("--max-points", type=int, default=30)
    p.add_argument("--contrast", type=float, nargs=2, default=(0.35, 0.6),
                   metavar=("LO", "HI"))
    p.add_argument("--background", choices=("flat", "gradient", "clutter"),
                   default="flat")
    p.add_argument("--clutter-density", type=float, default=0.002)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--min-separation", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the localizer")
    p.add_argument("--data", default=None, help="dataset directory")
    p.add_argument("--out", default=None, help="run output directory")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on annotated data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run tiled inference on one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="detections JSON path")
    p.add_argument("--overlay", default=None, help="optional marker overlay PNG")
    p.add_argument("--tile", type=int, default=256)
    p.add_argument("--overlap", type=int, default=32)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="run the four-configuration component study")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
