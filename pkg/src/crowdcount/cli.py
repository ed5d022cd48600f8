"""Command-line entry point: synth | gt | train | eval | infer.

Settings resolve as: explicit CLI flag > --config file > built-in default.
The config file is flat ``key = value`` with the keys listed in
:mod:`crowdcount.config`.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import ModelConfig, load_config
from .data_io import AnnotatedScene, load_manifest, save_density_map
from .density import downsample_preserving_count
from .evaluation import evaluate, render_report, write_report
from .synthetic import SynthSpec, generate_dataset
from .training import ground_truth_density, load_checkpoint, train


def _resolve_config(args: argparse.Namespace) -> ModelConfig:
    config = ModelConfig()
    if getattr(args, "config", None):
        config = load_config(args.config, base=config)
    overrides = {}
    for flag, field in (
        ("seed", "seed"),
        ("lr", "lr"),
        ("channel_multiplier", "channel_multiplier"),
        ("sigma_mode", "sigma_mode"),
        ("sigma", "sigma_fixed"),
        ("beta", "beta"),
        ("knn_k", "knn_k"),
        ("crops", "use_crop_augment"),
        ("resize", "use_resize_augment"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    return dataclasses.replace(config, **overrides) if overrides else config


def cmd_synth(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    rng = np.random.default_rng(config.seed)
    specs = []
    for i in range(args.scenes):
        n_people = int(rng.integers(args.min_people, args.max_people + 1))
        specs.append(
            SynthSpec(
                seed=config.seed * 1000 + i,
                n_people=n_people,
                height=args.height,
                width=args.width,
                n_clusters=args.clusters,
                cluster_spread=args.spread,
                blob_radius=args.blob_radius,
            )
        )
    manifest = generate_dataset(specs, args.out)
    print(f"wrote {len(specs)} scenes; manifest: {manifest}")
    return 0


def cmd_gt(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    scenes = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        dmap = ground_truth_density(scene, config)
        if args.downsample > 1:
            dmap = downsample_preserving_count(dmap, args.downsample)
        path = save_density_map(dmap, out_dir / f"{scene.id}.pdm")
        print(f"{scene.id}: count {dmap.count:.4f} -> {path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    result = train(
        config,
        args.manifest,
        args.out,
        iterations=args.iterations,
        stop_mae=args.stop_mae,
    )
    print(
        f"trained {result.iterations} iterations; train MAE {result.train_mae:.4f}\n"
        f"checkpoint: {result.checkpoint}\nlog: {result.log}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    result = evaluate(args.checkpoint, args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = result.write_csv(out_dir / "eval.csv")
    text_path, json_path = write_report(result, out_dir)
    print(render_report(result))
    print(f"per-image results: {csv_path}\nreport: {text_path}, {json_path}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    from .augmentation import legalize

    model = load_checkpoint(args.checkpoint)
    image = np.asarray(Image.open(args.image).convert("RGB"))
    scene = AnnotatedScene(id=Path(args.image).stem, image=image, points=np.zeros((0, 2)))
    output = model.predict(legalize(scene).image)
    values = output.dm_final.values
    peak = float(values.max())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    heat_path = out_dir / f"{scene.id}_heatmap.png"
    heat = np.zeros_like(values, dtype=np.uint8) if peak <= 0 else \
        np.round(values / peak * 255.0).astype(np.uint8)
    Image.fromarray(heat, mode="L").save(heat_path)
    print(f"estimated count: {output.dm_final.count:.3f}")
    print(f"density max: {peak:.6g} (heatmap grayscale is normalized to this value)")
    print(f"heatmap: {heat_path}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value settings file")
    parser.add_argument("--seed", type=int, default=None, help="master RNG seed")
    parser.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdcount", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    _add_common(p)
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--min-people", type=int, default=10, dest="min_people")
    p.add_argument("--max-people", type=int, default=120, dest="max_people")
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--spread", type=float, default=24.0)
    p.add_argument("--blob-radius", type=float, default=3.0, dest="blob_radius")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gt", help="write ground-truth density files for a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--sigma-mode", choices=("knn", "fixed"), default=None, dest="sigma_mode")
    p.add_argument("--sigma", type=float, default=None, help="fixed kernel width (px)")
    p.add_argument("--beta", type=float, default=None, help="adaptive kernel scale factor")
    p.add_argument("--knn-k", type=int, default=None, dest="knn_k")
    p.add_argument("--downsample", type=int, default=1, help="block-sum factor")
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--stop-mae", type=float, default=None, dest="stop_mae",
                   help="stop early once the train MAE drops below this")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--channel-multiplier", type=float, default=None, dest="channel_multiplier")
    p.add_argument("--crops", action=argparse.BooleanOptionalAction, default=None,
                   help="five-crop augmentation")
    p.add_argument("--resize", action=argparse.BooleanOptionalAction, default=None,
                   help="aspect-dependent resize augmentation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="count people in one image, write a heatmap")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_infer)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
