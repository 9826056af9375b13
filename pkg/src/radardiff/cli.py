"""Command line entry point: ``radardiff <dataset|train|distill|bench|infer|pipeline>``.

Every subcommand accepts ``--config``, ``--seed``, ``--out`` and ``--jobs``;
the last three override the corresponding config values.  Artefacts land in
``<out>/dataset``, ``<out>/teacher``, ``<out>/distilled`` and ``<out>/bench``
unless paths are given explicitly.

Exit codes: 0 success, 1 other library error, 2 bad configuration,
3 missing input, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import (
    DatasetManifest,
    ExperimentConfig,
    build_dataset,
    load_model,
    run_benchmark,
    run_distillation,
    run_pipeline,
    run_training,
)
from .consistency import multistep_generate
from .diffusion import heun_sample
from .errors import ConfigurationError, NumericError, RadarDiffError
from .geometry import BevImage, average_predictions, extract_points
from .radar_dsp import rah_to_polar_grid

log = logging.getLogger("radardiff")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.jobs is not None:
        cfg.jobs = args.jobs
    return cfg


def _manifest(args, cfg) -> DatasetManifest:
    return DatasetManifest.load(args.dataset or Path(cfg.out) / "dataset")


def cmd_dataset(args) -> int:
    cfg = _config(args)
    m = build_dataset(cfg)
    print(f"wrote {len(m.frames)} frames to {m.root} (hash {m.config_hash})")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    print(run_training(_manifest(args, cfg), cfg))
    return 0


def cmd_distill(args) -> int:
    cfg = _config(args)
    teacher = args.teacher or Path(cfg.out) / "teacher" / "teacher.ckpt"
    print(run_distillation(teacher, _manifest(args, cfg), cfg))
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    ckpts = {
        "teacher_edm": args.teacher or Path(cfg.out) / "teacher" / "teacher.ckpt",
        "distilled_cd": args.distilled or Path(cfg.out) / "distilled" / "distilled.ckpt",
    }
    methods = args.methods.split(",") if args.methods else None
    result = run_benchmark(_manifest(args, cfg), cfg, methods, ckpts)
    print((result["out"] / "table.csv").read_text(), end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    result = run_pipeline(cfg)
    print((result["out"] / "table.csv").read_text(), end="")
    return 0


def cmd_infer(args) -> int:
    """Generate BEV images and point clouds from stored range-azimuth heatmaps."""
    cfg = _config(args)
    model, header = load_model(args.checkpoint)
    im = cfg.image
    out = Path(cfg.out) / "infer"
    out.mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        rah = io.load_rah(path)
        if rah.scale != "db":
            raise ConfigurationError(f"{path}: inference expects a dB-scaled heatmap, got {rah.scale!r}")
        cond = rah_to_polar_grid(rah, im.height, im.width, im.range_extent, im.fov)
        samples = []
        for k in range(args.average):
            rng = np.random.default_rng([cfg.seed, rah.frame_id, k])
            if header["kind"] == "teacher":
                x = np.clip(heun_sample(model, cond, cfg.schedule, rng), 0, 1)
            else:
                x = multistep_generate(model, cond, cfg.schedule, args.steps, rng)
            samples.append(BevImage(x, im.range_extent, im.fov))
        bev = average_predictions(samples)
        pts = extract_points(bev, cfg.bench.threshold, rah.frame_id)
        stem = out / Path(path).stem
        io.save_bev(f"{stem}_bev.bin", bev)
        io.write_pgm(f"{stem}_bev.pgm", bev.values)
        io.write_points_csv(f"{stem}_points.csv", pts)
        print(f"{path}: {len(pts)} points -> {stem}_points.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--jobs", type=int, help="worker processes for data synthesis and CFAR")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="radardiff", description="Radar heatmap to BEV point cloud experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("dataset", parents=[common], help="synthesise scenes, radar heatmaps and BEV truth").set_defaults(
        func=cmd_dataset
    )
    s = sub.add_parser("train", parents=[common], help="train the diffusion teacher")
    s.add_argument("--dataset", help="dataset directory or manifest.json")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("distill", parents=[common], help="distil a one-step consistency model")
    s.add_argument("--dataset")
    s.add_argument("--teacher", help="teacher checkpoint")
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("bench", parents=[common], help="evaluate methods on the test split")
    s.add_argument("--dataset")
    s.add_argument("--teacher")
    s.add_argument("--distilled")
    s.add_argument("--methods", help="comma separated subset of oscfar,teacher_edm,distilled_cd")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("infer", parents=[common], help="generate BEV output for stored heatmaps")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--average", type=int, default=1, help="average this many samples per input")
    s.add_argument("--steps", type=int, default=1, help="consistency steps for distilled checkpoints")
    s.add_argument("inputs", nargs="+", help="RAH1 heatmap files")
    s.set_defaults(func=cmd_infer)

    sub.add_parser("pipeline", parents=[common], help="dataset, train, distill and bench in one go").set_defaults(
        func=cmd_pipeline
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    except RadarDiffError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
