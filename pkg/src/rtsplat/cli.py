"""Command-line entry point: ``rtsplat <experiment> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .experiments import run
from .experiments.config import KINDS, OPTIMIZERS, ConfigError, default_config, load_config
from .optim import OptimizationAborted

log = logging.getLogger("rtsplat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtsplat", description="Rasterize-then-splat experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="experiment")
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="INI file with an [experiment] section")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--layers", type=int, help="number of depth layers K")
        p.add_argument("--optimizer", choices=OPTIMIZERS)
        p.add_argument("--iters", type=int)
        p.add_argument("--lr", type=float, help="learning rate (Adam, GD)")
        p.add_argument("--workers", type=int, help="rasterizer threads")
        p.add_argument("--size", type=int, help="square image size in pixels")
        p.add_argument("--variant", help="scene or mode variant, see README")
        p.add_argument("--mesh", help="OBJ file (render)")
        p.add_argument("--fast-pose", action="store_true", default=None, help="pose-only fast path (fit-pose)")
        p.add_argument("--colors-only", action="store_true", default=None, help="freeze positions (fit-mesh)")
    return parser


def config_from_args(args: argparse.Namespace):
    overrides = {
        "out": args.out,
        "seed": args.seed,
        "layers": args.layers,
        "optimizer": args.optimizer,
        "iters": args.iters,
        "lr": args.lr,
        "workers": args.workers,
        "width": args.size,
        "height": args.size,
        "variant": args.variant,
        "mesh": args.mesh,
        "fast_pose": args.fast_pose,
        "colors_only": args.colors_only,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        cfg = load_config(args.config, **overrides)
        if cfg.kind != args.kind:
            raise ConfigError(f"{args.config} describes '{cfg.kind}', not '{args.kind}'")
        return cfg
    return default_config(args.kind, **overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"rtsplat: {exc}", file=sys.stderr)
        return 2
    log.info("running %s into %s", cfg.kind, cfg.out)
    try:
        result = run(cfg)
    except OptimizationAborted as exc:
        print(f"rtsplat: aborted: {exc}", file=sys.stderr)
        return 1
    fit = result.get("result") if isinstance(result, dict) else None
    if fit is not None and fit.aborted:
        print(f"rtsplat: aborted: {fit.aborted}", file=sys.stderr)
        return 1
    print(f"wrote {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
