"""Command-line entry point: ``splatsim {simulate,perceive,sample,render}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import SplatSimError
from .pipeline import COMMANDS, PROVIDER_MODES, PipelineRun

log = logging.getLogger("splatsim")

HELP = {
    "simulate": "perceive, sample, simulate and render every frame",
    "perceive": "write per-object material property files",
    "sample": "write the driving particles of every deformable object",
    "render": "render the undeformed scene once",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="splatsim", description="Physics-driven animation of Gaussian-splat scenes.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--scene", required=True, help="splat PLY file")
        p.add_argument("--manifest", help="object manifest JSON")
        p.add_argument("--config", help="simulation config JSON (defaults when omitted)")
        p.add_argument("--out", required=True, help="output directory (created if absent)")
        p.add_argument("--provider", choices=PROVIDER_MODES, default="offline", help="material perception backend")
        p.add_argument("--seed", type=int, help="overrides the config seeds")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--frames", type=int, help="overrides config.frames")
        p.add_argument("--dump-particles", action="store_true", help="also write driving particles per frame")
        p.add_argument("--no-cache", action="store_true", help="ignore the perception cache")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    run = PipelineRun(
        scene=args.scene,
        out=args.out,
        manifest=args.manifest,
        config=args.config,
        provider=args.provider,
        seed=args.seed,
        threads=args.threads,
        frames=args.frames,
        dump_particles=args.dump_particles,
        use_cache=not args.no_cache,
    )
    try:
        COMMANDS[args.command](run)
    except SplatSimError as exc:
        print(f"splatsim {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:
        log.exception("unexpected failure")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
