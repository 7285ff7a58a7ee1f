"""Batch command line: project, propose, evaluate, distill-demo, render.

Every command reads one flat ``key = value`` config (all keys optional),
applies the shared flag overrides, and writes its outputs under the run
directory with write-then-rename, so a failed run never leaves truncated
files and the same config always produces byte-identical outputs.

Exit codes: 0 all outputs written, 1 runtime or config failure, 2 usage
error, 3 average precision undefined (no eligible truth boxes anywhere).

``--seed N`` replaces the synthetic scene list with the single scene N for
the scan-driven commands and reseeds the student initializer for
``distill-demo``.
"""

from __future__ import annotations

import argparse
import glob
import math
import os
import sys

from .cloudio import (
    SceneSpec,
    generate_scene,
    read_detections,
    read_velodyne_bin,
    write_bytes_atomic,
    write_detections,
    write_text_atomic,
)
from .config import RunConfig
from .estimators import StudentDistiller
from .evaluation import (
    ReportTable,
    UndefinedAPError,
    average_precision,
    match,
)
from .frontview import FrontViewMap, box_to_map_rect, build_map, crop_patch, render_channel_pgm
from .geometry import Rect2D
from .render import bev_svg
from .uvpm import propose

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_UNDEFINED_AP = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--out", metavar="DIR", help="output directory override")
    common.add_argument("--seed", type=int, metavar="N", help="seed override")
    common.add_argument("--mode", choices=("uvpm", "upm"), help="proposal mode override")
    common.add_argument(
        "--vote", choices=("geometric", "learned"), help="vote backbone override"
    )
    parser = argparse.ArgumentParser(
        prog="votebox",
        description="Desk-scale 3D proposal, distillation, and evaluation runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("project", parents=[common], help="front-view maps + occupancy stats")
    sub.add_parser("propose", parents=[common], help="3D proposals per scan")
    sub.add_parser("evaluate", parents=[common], help="AP table + BEV SVG per scene")
    sub.add_parser(
        "distill-demo", parents=[common], help="train the micro student, print loss curve"
    )
    sub.add_parser("render", parents=[common], help="per-channel PGM renders")
    return parser


def _load_run_config(args) -> RunConfig:
    if args.config is not None:
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig()
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.mode = args.mode
    if args.vote is not None:
        cfg.vote = args.vote
    return cfg


def _load_scans(cfg: RunConfig):
    """(clouds, scenes): scenes is None for on-disk scans (no truths)."""
    if cfg.data_dir is not None:
        paths = sorted(glob.glob(os.path.join(cfg.data_dir, "*.bin")))
        if not paths:
            raise FileNotFoundError(f"no .bin scans under {cfg.data_dir}")
        clouds = [
            read_velodyne_bin(p, frame_id=os.path.splitext(os.path.basename(p))[0])
            for p in paths
        ]
        return clouds, None
    seeds = (cfg.seed,) if cfg.seed is not None else cfg.synthetic_seeds
    scenes = [
        generate_scene(SceneSpec(rng_seed=s, n_objects=cfg.synthetic_objects))
        for s in seeds
    ]
    return [scene.cloud for scene in scenes], scenes


def _ensure_out(cfg: RunConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def cmd_project(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    clouds, _ = _load_scans(cfg)
    for cloud in clouds:
        fvmap = build_map(cloud, cfg.projection)
        path = os.path.join(out, f"{cloud.frame_id}_height.pgm")
        write_bytes_atomic(path, render_channel_pgm(fvmap, "height"))
        print(
            f"{cloud.frame_id}: rows={fvmap.rows} cols={fvmap.cols} "
            f"occupied={fvmap.occupied_count}"
        )
    return EXIT_OK


def cmd_render(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    clouds, _ = _load_scans(cfg)
    for cloud in clouds:
        fvmap = build_map(cloud, cfg.projection)
        for channel in FrontViewMap.CHANNELS:
            path = os.path.join(out, f"{cloud.frame_id}_{channel}.pgm")
            write_bytes_atomic(path, render_channel_pgm(fvmap, channel))
        print(f"{cloud.frame_id}: wrote {len(FrontViewMap.CHANNELS)} channel renders")
    return EXIT_OK


def _dets_path(out: str, frame_id: str) -> str:
    return os.path.join(out, f"{frame_id}_dets.txt")


def cmd_propose(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    clouds, _ = _load_scans(cfg)
    ucfg = cfg.resolved_uvpm()
    for cloud in clouds:
        fvmap = build_map(cloud, cfg.projection)
        proposals = propose(cloud, fvmap, ucfg, cfg.projection)
        write_detections(proposals, _dets_path(out, cloud.frame_id))
        print(f"{cloud.frame_id}: {len(proposals)} proposals")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    _, scenes = _load_scans(cfg)
    if scenes is None:
        raise UndefinedAPError("on-disk scans carry no truth boxes to evaluate against")
    per_scene = []
    for scene in scenes:
        path = _dets_path(out, scene.cloud.frame_id)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing detections file {path} (run propose first)")
        per_scene.append((read_detections(path), list(scene.truth_boxes)))

    rows = []
    undefined = 0
    for ecfg in cfg.eval_grid():
        try:
            results = [match(dets, truths, ecfg) for dets, truths in per_scene]
            ap = float(average_precision(results, ecfg))
        except UndefinedAPError:
            undefined += 1
            ap = 0.0
        rows.append(
            {
                "metric": ecfg.metric,
                "iou": ecfg.iou_threshold,
                "difficulty": ecfg.difficulty,
                "ap": ap,
            }
        )
    if rows and undefined == len(rows):
        raise UndefinedAPError(
            "no eligible truth boxes in any scene for any metric cell"
        )
    table = ReportTable(rows=tuple(rows))
    write_text_atomic(os.path.join(out, "metrics.csv"), table.to_csv())
    write_text_atomic(os.path.join(out, "metrics.json"), table.to_json() + "\n")
    for scene, (dets, _) in zip(scenes, per_scene):
        svg = bev_svg(scene.boxes, dets)
        write_text_atomic(os.path.join(out, f"{scene.cloud.frame_id}_bev.svg"), svg)
    for row in rows:
        print(
            f"{row['metric']} iou={row['iou']} difficulty={row['difficulty']} "
            f"ap={row['ap']!r}"
        )
    return EXIT_OK


def _empty_strip_rect(fvmap: FrontViewMap, k: int, width: int = 20):
    """A deterministic unoccupied strip for negative patches.

    Scans the steep-elevation edge rows (returns there need a range of a few
    meters at most, which desk scenes never produce) and slides sideways
    until the window is verifiably empty.
    """
    rows = min(5, fvmap.rows)
    if rows == 0 or fvmap.cols < width:
        raise ValueError("map too small to carve an empty strip")
    c0 = (k * 37) % (fvmap.cols - width + 1)
    for _ in range(fvmap.cols):
        if not fvmap.occupancy[:rows, c0 : c0 + width].any():
            return (0.0, float(c0), float(rows), float(c0 + width))
        c0 = (c0 + width) % (fvmap.cols - width + 1)
    raise ValueError("no unoccupied strip found for negative patches")


def build_distill_batch(scenes, projection, input_size: int) -> list:
    """(patch map, roi list) instances: truth-box crops and empty-strip crops."""
    full_roi = Rect2D(
        center=(input_size / 2.0, input_size / 2.0),
        size=(float(input_size), float(input_size)),
    )
    instances = []
    for scene in scenes:
        fvmap = build_map(scene.cloud, projection)
        n_pos = 0
        for truth in scene.truth_boxes:
            rect = box_to_map_rect(truth.box, projection)
            if rect is None:
                continue
            instances.append((crop_patch(fvmap, rect, input_size), [full_roi]))
            n_pos += 1
        for k in range(n_pos):
            rect = _empty_strip_rect(fvmap, k)
            instances.append((crop_patch(fvmap, rect, input_size), [full_roi]))
    if not instances:
        raise ValueError("no projectable truth boxes; cannot build a distill batch")
    return instances


def cmd_distill_demo(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    _, scenes = _load_scans(cfg)
    if scenes is None:
        raise ValueError("distill-demo needs synthetic scenes (truth boxes)")
    distiller = StudentDistiller(
        learning_rate=cfg.distill_lr,
        n_steps=cfg.distill_steps,
        seed=cfg.seed if cfg.seed is not None else cfg.distill_seed,
    )
    instances = build_distill_batch(scenes, cfg.projection, distiller.input_size)
    distiller.fit(instances)
    losses = distiller.losses_
    for i, value in enumerate(losses):
        if not math.isfinite(value):
            raise ValueError(f"non-finite loss at step {i}: {value!r}")
    stride = max(1, len(losses) // 10)
    for i in range(0, len(losses), stride):
        print(f"step {i} loss={losses[i]!r}")
    initial, final = losses[0], losses[-1]
    print(
        f"initial={initial!r} final={final!r} "
        f"contributing={distiller.n_contributing_} pairs={len(instances)}"
    )
    write_text_atomic(
        os.path.join(out, "distill_losses.txt"),
        "\n".join(repr(v) for v in losses) + "\n",
    )
    return EXIT_OK


_COMMANDS = {
    "project": cmd_project,
    "propose": cmd_propose,
    "evaluate": cmd_evaluate,
    "distill-demo": cmd_distill_demo,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = _load_run_config(args)
        return _COMMANDS[args.command](cfg)
    except UndefinedAPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED_AP
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
