"""Command-line entry point: encode, simulate, metrics, rasterize, shapes.

Exit codes: 0 success, 1 usage error, 2 data error (bad or missing input
files, config schema violations, failed runs).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats, metrics
from .shape_io import ShapeFormatError, atomic_write, load_shape, write_pgm, write_vox
from .shapes import SHAPES_2D, SHAPES_3D, make_shape
from .sim import PlacementError, SimConfig, build_maps, run
from .tree_map import encode, merge, rasterize

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("treeswarm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


DATA_ERRORS = (
    OSError,
    ShapeFormatError,
    formats.ConfigError,
    formats.TreeFormatError,
    PlacementError,
    FloatingPointError,
    KeyError,
    ValueError,
)


def _load_image(source: str, d_max: int):
    if source in SHAPES_2D or source in SHAPES_3D:
        return make_shape(source, 2**d_max)
    return load_shape(source)


def cmd_encode(args) -> int:
    image = _load_image(args.shape, args.dmax)
    tree = merge(encode(image, args.dmax))
    stats = formats.tree_stats(tree)
    atomic_write(args.out, formats.dump_tree(tree))
    atomic_write(str(args.out) + ".stats.txt", stats)
    sys.stdout.write(stats)
    return EXIT_OK


def _apply_overrides(config: SimConfig, args) -> SimConfig:
    changes = {
        "seed": args.seed,
        "d_max": args.dmax,
        "d_map": args.dmap,
        "n_steps": args.steps,
        "n_robot": args.robots,
    }
    changes = {k: v for k, v in changes.items() if v is not None}
    try:
        return replace(config, **changes)
    except ValueError as exc:
        raise formats.ConfigError(str(exc)) from None


def cmd_simulate(args) -> int:
    config = _apply_overrides(formats.load_config(args.config), args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s (%dD, %d robots, %d steps)", config.shape, config.dim, config.n_robot, config.n_steps)
    traj = run(config)
    report = traj.report()
    flat = {**report.flat(), **traj.header}
    formats.write_text(out / "config.txt", formats.config_to_text(config))
    formats.write_text(out / "trajectory.csv", formats.trajectory_csv(traj))
    formats.write_text(out / "step_metrics.csv", formats.step_metrics_csv(report.entering_rate, report.m3))
    formats.write_text(out / "metrics.json", formats.metrics_json(flat))
    et = "not reached" if report.entering_time is None else f"step {report.entering_time}"
    print(
        f"entering time: {et}; final entering rate {report.final_entering_rate:.1f}%; "
        f"final uniformity {report.final_uniformity:.3f}"
    )
    return EXIT_OK


def cmd_metrics(args) -> int:
    config = _apply_overrides(formats.load_config(args.config), args)
    header, steps, frames = formats.read_trajectory_csv(args.traj)
    if frames.shape[1] != config.n_robot or frames.shape[2] != config.dim:
        raise ValueError(
            f"trajectory has {frames.shape[1]} robots in {frames.shape[2]}D; config expects "
            f"{config.n_robot} in {config.dim}D"
        )
    if header.get("config_hash", config.digest()) != config.digest():
        log.warning("trajectory was written under a different config (hash %s)", header["config_hash"])
    emap, nmap = build_maps(config)
    params = config.params
    rates = np.array([metrics.entering_rate(f, emap, nmap, params) for f in frames])
    m3 = np.array([metrics.uniformity(f, params.r_sense) for f in frames])
    report = metrics.summarize(emap.tree, rates, m3, frames[-1], params.r_sense, steps)
    text = formats.metrics_json({**report.flat(), "n_records": len(steps)})
    if args.out:
        formats.write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_rasterize(args) -> int:
    tree = formats.load_tree(Path(args.tree).read_bytes())
    image = rasterize(tree)
    suffix = Path(args.out).suffix.lower()
    if suffix == ".pgm":
        if tree.dim != 2:
            raise ValueError("PGM output needs a 2D tree; use .vox for 3D")
        write_pgm(image, args.out)
    elif suffix in (".vox", ".vox3"):
        if tree.dim != 3:
            raise ValueError("VOX3 output needs a 3D tree; use .pgm for 2D")
        write_vox(image, args.out)
    else:
        raise UsageError(f"rasterize: unknown output extension {suffix!r} (use .pgm or .vox)")
    print(f"wrote {image.side}^{image.dim} image with {image.n_black} black cells to {args.out}")
    return EXIT_OK


def cmd_shapes(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    side = 2**args.dmax
    for name in args.names or sorted(SHAPES_2D) + sorted(SHAPES_3D):
        image = make_shape(name, side)
        path = out / f"{name}.{'pgm' if image.dim == 2 else 'vox'}"
        (write_pgm if image.dim == 2 else write_vox)(image, path)
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treeswarm", description="Tree-map swarm shape assembly.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("encode", help="encode a shape into a tree dump")
    e.add_argument("shape", help="PGM/VOX3 file or built-in stand-in name")
    e.add_argument("--dmax", type=int, required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    def overrides(sp):
        sp.add_argument("--config", required=True, help="config file or preset (default2d, default3d)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dmax", type=int)
        sp.add_argument("--dmap", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--robots", type=int)

    s = sub.add_parser("simulate", help="run a simulation and write trajectory and metrics")
    overrides(s)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("metrics", help="recompute metrics from a trajectory CSV")
    overrides(m)
    m.add_argument("--traj", required=True)
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)

    r = sub.add_parser("rasterize", help="decode a tree dump to a dense PGM or VOX3 image")
    r.add_argument("tree")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rasterize)

    g = sub.add_parser("shapes", help="write the built-in stand-in shapes as PGM/VOX3 files")
    g.add_argument("names", nargs="*", help="subset of shapes (default: all)")
    g.add_argument("--dmax", type=int, default=7)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_shapes)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
