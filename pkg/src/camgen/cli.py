"""Command-line pipeline driver.

Subcommands: gen-data, train, generate, eval, layout-check. Exit codes:
0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config, load_preset, validate
from .fileio import atomic_write_text


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="camgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--preset", choices=("desk", "paper"), help="named shipped preset")
        p.add_argument("--seed", type=int, help="override the root seed")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded math for byte-identical artifacts")

    p = sub.add_parser("gen-data", help="render a clip dataset")
    common(p)
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--mix", choices=("uniform7", "random"), default="uniform7")
    p.add_argument("--out", help="dataset directory (default: config dataset_dir)")

    p = sub.add_parser("train", help="train one pipeline stage")
    common(p)
    p.add_argument("stage", choices=("camcodec", "vidcodec", "model"))
    p.add_argument("--dataset", help="dataset directory (default: config dataset_dir)")
    p.add_argument("--out", help="checkpoint directory (default: config checkpoint_dir)")
    p.add_argument("--steps", type=int, help="override training steps")
    p.add_argument("--mix-ratio", type=float, help="camera-conditioned fraction")
    p.add_argument("--snapshot-every", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the last snapshot")

    p = sub.add_parser("generate", help="generate a clip from an image + direction")
    common(p)
    p.add_argument("--ckpt", required=True, help="model checkpoint file")
    p.add_argument("--codecs", help="directory holding camcodec.rvq / vidcodec.vvq "
                                    "(default: the checkpoint's directory)")
    p.add_argument("--image", required=True, help="input image as a 1-frame frames.bin")
    p.add_argument("--direction", required=True)
    p.add_argument("--speed", type=float, default=0.08, help="world units per frame")
    p.add_argument("--temperature", type=float)
    p.add_argument("--out", required=True, help="output clip directory")

    p = sub.add_parser("eval", help="evaluate checkpoints on a dataset")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file, or directory for a series")
    p.add_argument("--dataset", help="evaluation dataset (default: config dataset_dir)")
    p.add_argument("--num-videos", type=int, default=40)
    p.add_argument("--out", help="report directory (default: config report_dir)")
    p.add_argument("--temperature", type=float)

    p = sub.add_parser("layout-check", help="print the token-budget arithmetic")
    common(p)
    return parser


def _resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.preset:
        cfg = load_preset(args.preset)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = load_config(path, cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return validate(cfg)


def _run(args) -> int:
    from . import pipeline  # deferred: torch import is slow

    cfg = _resolve_config(args)
    if args.deterministic:
        import torch

        torch.set_num_threads(1)

    if args.command == "gen-data":
        if args.clips < 1:
            raise UsageError("--clips must be >= 1")
        out = Path(args.out or cfg.dataset_dir)
        manifest = pipeline.cmd_gen_data(cfg, out, args.clips, args.mix)
        print(f"wrote {args.clips} clips under {out} (manifest: {manifest})")
        return 0

    if args.command == "train":
        dataset = Path(args.dataset or cfg.dataset_dir)
        ckpt_dir = Path(args.out or cfg.checkpoint_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        if args.steps is not None:
            cfg = replace(cfg, steps=args.steps)
        if args.mix_ratio is not None:
            cfg = validate(replace(cfg, mix_ratio=args.mix_ratio))
        if args.snapshot_every is not None:
            cfg = validate(replace(cfg, snapshot_every=args.snapshot_every))
        if args.stage == "camcodec":
            out = pipeline.cmd_train_camcodec(cfg, dataset, ckpt_dir)
        elif args.stage == "vidcodec":
            out = pipeline.cmd_train_vidcodec(cfg, dataset, ckpt_dir)
        else:
            out = pipeline.cmd_train_model(cfg, dataset, ckpt_dir, resume=args.resume)
        print(f"wrote {out}")
        return 0

    if args.command == "generate":
        codecs = Path(args.codecs) if args.codecs else Path(args.ckpt).parent
        try:
            out = pipeline.cmd_generate(
                cfg,
                args.ckpt,
                codecs,
                args.image,
                args.direction,
                args.speed,
                args.out,
                temperature=args.temperature,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        print(f"wrote {out}")
        return 0

    if args.command == "eval":
        dataset = Path(args.dataset or cfg.dataset_dir)
        report_dir = Path(args.out or cfg.report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        if args.num_videos < 1:
            raise UsageError("--num-videos must be >= 1")
        ckpt = Path(args.ckpt)
        try:
            if ckpt.is_dir():
                points = pipeline.eval_series(cfg, ckpt, dataset, args.num_videos, args.temperature)
            else:
                report = pipeline.eval_run(
                    cfg, ckpt, ckpt.parent, dataset, args.num_videos, args.temperature
                )
                points = [pipeline.SeriesPoint(-1, report)]
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        for p in points:
            name = f"report_step{p.step:06d}.txt" if p.step >= 0 else "report.txt"
            atomic_write_text(report_dir / name, p.report.table())
        if len(points) > 1:
            table = pipeline.series_table(points)
            atomic_write_text(report_dir / "series.txt", table)
            print(table, end="")
        else:
            print(points[0].report.table(), end="")
        return 0

    if args.command == "layout-check":
        print(pipeline.layout_check(cfg), end="")
        return 0

    raise UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
