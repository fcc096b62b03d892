"""Command-line interface: train, eval, mask, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diffmask, report, tensorio, trainer
from .config import VARIANTS, default_config_text, load_config


def _cmd_train(args) -> int:
    run = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.variant is not None:
        overrides["variant"] = args.variant
    if overrides:
        run = run.with_overrides(**overrides)
    out = Path(args.out or f"runs/{run.variant}-seed{run['seed']}")
    summary = trainer.train(run, out)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_eval(args) -> int:
    result = trainer.evaluate(args.checkpoint, episodes=args.episodes, seed=args.seed,
                              mode=args.mode, variant=args.variant)
    shown = {k: v for k, v in result.items() if k != "returns"}
    print(json.dumps(shown, indent=2))
    return 0


def _cmd_mask(args) -> int:
    frames = tensorio.read_raw_tensor(args.in_path)
    if frames.ndim != 4:
        print(f"error: expected a (L, H, W, C) frame sequence, got shape {frames.shape}", file=sys.stderr)
        return 2
    cfg = diffmask.DiffConfig(epsilon=args.epsilon, interval=args.interval,
                              dilation_radius=args.radius, strategy=args.strategy)
    masks = np.zeros(frames.shape[:3], dtype=np.float32)
    diffs = np.zeros_like(frames)
    for t in range(1, frames.shape[0]):
        diffs[t] = diffmask.rolling_differential_observation(frames, t, cfg)
        if cfg.strategy == "moving_average":
            raw = diffmask.moving_average_mask(frames, t, cfg)
        elif cfg.strategy == "multiframe_logical" and t - cfg.window_delta - cfg.interval >= 0:
            raw = diffmask.multiframe_logical_mask(frames, t, cfg)
        else:
            raw = diffmask.backward_difference(frames[t], frames[max(t - cfg.interval, 0)], cfg.epsilon)
        masks[t] = diffmask.dilate(raw, cfg.dilation_radius)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_raw_tensor(out / "masks.rt", masks)
    tensorio.write_raw_tensor(out / "diff_obs.rt", diffs)
    print(f"wrote {out / 'masks.rt'} and {out / 'diff_obs.rt'}")
    return 0


def _cmd_report(args) -> int:
    paths = report.emit_report(args.runs, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _cmd_config(args) -> int:
    text = default_config_text()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modrssm",
                                     description="world-model training on toy pixel environments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--variant", choices=VARIANTS, default=None, help="override the config variant")
    p.add_argument("--out", default=None, help="output directory (metrics, checkpoints, summary)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("sample", "greedy"), default="sample")
    p.add_argument("--variant", choices=VARIANTS, default=None,
                   help="optional cross-check against the checkpoint's variant")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("mask", help="compute differencing masks for a raw-tensor frame file")
    p.add_argument("--in", dest="in_path", required=True, help="raw-tensor file of (L, H, W, C) frames")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--strategy", choices=diffmask.STRATEGIES, default="backward")
    p.add_argument("--epsilon", type=float, default=0.001)
    p.add_argument("--interval", type=int, default=1)
    p.add_argument("--radius", type=int, default=1)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("report", help="aggregate run metrics into CSV plot data")
    p.add_argument("--runs", nargs="+", required=True, help="run directories (or metrics files)")
    p.add_argument("--out", required=True, help="output directory for the CSV tables")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("config", help="print or write a fully-documented default config")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
