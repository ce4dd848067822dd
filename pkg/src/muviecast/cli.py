"""Command-line entry point.

Verbs: stylize, pretrain, ablate, color-adjust, eval-consistency. Exit
codes: 0 success, 1 validation or usage error, 2 runtime failure. Every
configuration key is overridable with --set section.key=value; the common
keys also have dedicated flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ARCH_PRESETS, dump_config, load_config
from .consistency import compare_sets
from .color import apply_color_map, fit_color_map
from .dataset import (IMAGE_EXTENSIONS, load_scene, read_image,
                      read_pair_file, write_image)
from .errors import ConfigError, MuviecastError, ValidationError
from .geometry import BackendSpec, build_backend
from .trainer import (TrainConfig, ablate, pretrain_transfernet,
                      stylize_pipeline)
from .transfer import save_checkpoint


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; the contract here is 1
    def error(self, message):
        raise _UsageError(message)


def _add_common_flags(p):
    p.add_argument("--scene", help="scene directory (images/ + cams/)")
    p.add_argument("--style", help="style image file")
    p.add_argument("--arch", choices=sorted(ARCH_PRESETS),
                   help="named architecture preset")
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--window", type=int, help="views per training sample")
    p.add_argument("--color-adjust", dest="color_adjust",
                   choices=["pre", "post", "off"])
    p.add_argument("--seed", type=int)
    p.add_argument("--device", help="cpu (default) or a cuda device")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")


def _build_parser() -> _Parser:
    parser = _Parser(prog="muviecast",
                     description="Multi-view-consistent style transfer")
    sub = parser.add_subparsers(dest="verb", metavar="VERB")

    p = sub.add_parser("stylize", help="train on a scene and write stylized views")
    _add_common_flags(p)

    p = sub.add_parser("pretrain", help="fit a style on a plain image folder")
    _add_common_flags(p)
    p.add_argument("--images", help="folder of training images "
                                    "(default: <scene>/images)")

    p = sub.add_parser("ablate", help="train per-loss runs plus the combination")
    _add_common_flags(p)
    p.add_argument("--losses", default="content,style,imgeom,geometry3d",
                   help="comma-separated subset of "
                        "content,style,imgeom,geometry3d")

    p = sub.add_parser("color-adjust", help="match a folder's colors to a style")
    p.add_argument("--style", required=True)
    p.add_argument("--mode", choices=["pre", "post"], default="pre")
    p.add_argument("in_dir")
    p.add_argument("out_dir")

    p = sub.add_parser("eval-consistency",
                       help="score cross-view consistency of an image set")
    _add_common_flags(p)
    p.add_argument("--images", help="directory of images to score")
    p.add_argument("--baseline",
                   help="directory of baseline images (default: scene inputs)")
    return parser


def _resolved_config(args) -> dict:
    overrides = {}
    for key in ("scene", "style", "arch", "out", "epochs", "window",
                "seed", "device", "color_adjust"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for item in getattr(args, "overrides", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    return load_config(getattr(args, "config", None), overrides)


def _require(cfg, key, flag):
    if not cfg.get(key):
        raise ConfigError(f"{flag} is required for this command")
    return cfg[key]


def _load_scene_with_pairs(scene_dir):
    scene = load_scene(scene_dir)
    pair_path = Path(scene_dir) / "pair.txt"
    ranking = read_pair_file(pair_path) if pair_path.exists() else None
    return scene, ranking


def _list_images(folder):
    folder = Path(folder)
    if not folder.is_dir():
        raise ValidationError(f"not a directory: {folder}")
    paths = sorted(p for p in folder.iterdir()
                   if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not paths:
        raise ValidationError(f"no images found in {folder}")
    return paths


def _cmd_stylize(args, cfg) -> int:
    scene_dir = _require(cfg, "scene", "--scene")
    style_path = _require(cfg, "style", "--style")
    scene, ranking = _load_scene_with_pairs(scene_dir)
    style = read_image(style_path)
    tcfg = TrainConfig.from_mapping(cfg)
    tcfg.pair_ranking = ranking
    _net, report, paths = stylize_pipeline(
        scene, style, tcfg, cfg["out"], style_id=Path(style_path).stem,
        color_adjust=cfg["color_adjust"])
    print(f"wrote {len(paths)} stylized views under "
          f"{Path(paths[0]).parent if paths else cfg['out']}")
    print(f"final-epoch mean total loss: {report.epoch_means()[-1]:.5f}")
    return 0


def _cmd_pretrain(args, cfg) -> int:
    style_path = _require(cfg, "style", "--style")
    folder = args.images
    if folder is None:
        scene_dir = _require(cfg, "scene", "--images or --scene")
        folder = Path(scene_dir) / "images"
    style = read_image(style_path)
    tcfg = TrainConfig.from_mapping(cfg)
    net, report = pretrain_transfernet(folder, style, tcfg)
    style_id = Path(style_path).stem
    run_dir = Path(cfg["out"]) / "pretrained" / style_id
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt = run_dir / "checkpoint.pt"
    save_checkpoint(net, ckpt, style_id, extra={"arch": tcfg.arch})
    (run_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    print(f"pretrained checkpoint: {ckpt}")
    return 0


def _cmd_ablate(args, cfg) -> int:
    scene_dir = _require(cfg, "scene", "--scene")
    style_path = _require(cfg, "style", "--style")
    losses = [s.strip() for s in args.losses.split(",") if s.strip()]
    scene, ranking = _load_scene_with_pairs(scene_dir)
    style = read_image(style_path)
    tcfg = TrainConfig.from_mapping(cfg)
    tcfg.pair_ranking = ranking
    reports = ablate(scene, style, tcfg, losses)
    root = Path(cfg["out"]) / scene.scene_id / Path(style_path).stem / "ablate"
    for name, report in reports.items():
        run_dir = root / name
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2))
    print(f"wrote {len(reports)} ablation runs under {root}")
    return 0


def _cmd_color_adjust(args) -> int:
    style = read_image(args.style)
    paths = _list_images(args.in_dir)
    images = [read_image(p) for p in paths]
    # one joint map keeps the adjustment identical across views
    cmap = fit_color_map(np.concatenate([im.reshape(-1, 3) for im in images]),
                         style)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for p, im in zip(paths, images):
        write_image(out_dir / p.name, apply_color_map(im, cmap))
    print(f"color-adjusted {len(paths)} images ({args.mode}) -> {out_dir}")
    return 0


def _cmd_eval_consistency(args, cfg) -> int:
    scene_dir = _require(cfg, "scene", "--scene")
    if not args.images:
        raise ConfigError("--images is required for this command")
    scene, _ranking = _load_scene_with_pairs(scene_dir)
    images = [read_image(p) for p in _list_images(args.images)]
    if len(images) != len(scene):
        raise ValidationError(
            f"{len(images)} images to score vs {len(scene)} scene views")
    if args.baseline:
        baseline = [read_image(p) for p in _list_images(args.baseline)]
    else:
        baseline = scene.images
    preset = ARCH_PRESETS[cfg["arch"]]
    backend = build_backend(BackendSpec(kind=cfg["geometry"]["backend"],
                                        feature_base=preset["feature_base"]))
    cmp = compare_sets(baseline, images, scene.cameras,
                       depth_source="from_input", backend=backend,
                       window=min(cfg["window"], len(scene)))
    out = Path(args.out if args.out else "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(cmp.to_dict(), indent=2))
    print(f"baseline rmse {cmp.input_report.mean_rmse:.5f}  "
          f"scored rmse {cmp.stylized_report.mean_rmse:.5f}  "
          f"ratio {cmp.ratio:.3f}")
    print(f"report: {out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if args.verb is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.verb == "color-adjust":
            return _cmd_color_adjust(args)
        cfg = _resolved_config(args)
        if getattr(args, "print_config", False):
            print(dump_config(cfg), end="")
            return 0
        if args.verb == "stylize":
            return _cmd_stylize(args, cfg)
        if args.verb == "pretrain":
            return _cmd_pretrain(args, cfg)
        if args.verb == "ablate":
            return _cmd_ablate(args, cfg)
        if args.verb == "eval-consistency":
            return _cmd_eval_consistency(args, cfg)
        raise ConfigError(f"unknown verb {args.verb!r}")
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MuviecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to 2, per the contract
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
