"""Command-line entry points: gen-data, train, infer, eval, params.

Every command exits 0 on success and 1 with a one-line diagnostic on stderr
otherwise. Config files are JSON with optional "model", "train", and "synth"
sections; field errors are reported with their dotted path.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .backend import set_backend
from .config import (ConfigError, ModelConfig, SynthConfig, TrainConfig,
                     desk_scale_train, load_config)
from .evaluate import (evaluate_branch, evaluate_soma, make_branch_predictor,
                       make_soma_predictor)
from .infer import extract_somas, segment_cell, sliding_window_infer
from .model import BranchModel, SomaModel, count_parameters
from .synth import generate_dataset, load_sample
from .train import (build_branch_dataset, build_soma_dataset,
                    load_trained_model, train_stage, transfer_weights)
from .v3d import read_v3d, write_v3d


def _read_config(path) -> tuple[ModelConfig, TrainConfig, SynthConfig]:
    if path is None:
        return ModelConfig(), TrainConfig(), SynthConfig()
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "config root must be a JSON object")
    return load_config(raw)


def _sample_dirs(data_dir) -> list[Path]:
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    dirs = sorted(p for p in root.iterdir() if (p / "meta.json").is_file())
    if not dirs:
        raise FileNotFoundError(f"no sample directories under {root} "
                                "(expected subdirs with meta.json)")
    return dirs


def _load_volume(path) -> np.ndarray:
    path = Path(path)
    if path.is_dir():
        path = path / "image.v3d"
    return read_v3d(path).astype(np.float32)


def _cmd_gen_data(args) -> int:
    _, _, synth = _read_config(args.config)
    if args.seed is not None:
        synth = replace(synth, seed=args.seed)
    if args.dims is not None:
        synth = replace(synth, dims=tuple(args.dims))
    synth.validate()
    paths = generate_dataset(args.out, args.count, synth,
                             args.overlap_volumes)
    (Path(args.out) / "synth_config.json").write_text(
        json.dumps(asdict(synth), indent=1))
    print(f"wrote {len(paths)} volumes under {args.out}")
    return 0


def _cmd_train(args) -> int:
    model_cfg, train_cfg, _ = _read_config(args.config)
    if args.config is None:
        train_cfg = desk_scale_train(args.stage)
    if args.variant is not None:
        model_cfg = ModelConfig.for_variant(args.variant,
                                            model_cfg.input_dims)
    train_cfg = replace(train_cfg, stage=args.stage)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = replace(
            train_cfg, epochs=args.epochs,
            warmup_epochs=min(train_cfg.warmup_epochs, args.epochs - 1))
    model_cfg.validate()
    train_cfg.validate()

    samples = [load_sample(p) for p in _sample_dirs(args.data)]
    if args.stage == "soma":
        dataset = build_soma_dataset(samples, model_cfg.input_dims,
                                     min_foreground=args.min_foreground)
        model = SomaModel(model_cfg, seed=train_cfg.seed)
    else:
        if train_cfg.crop_dims != model_cfg.input_dims:
            train_cfg = replace(train_cfg, crop_dims=model_cfg.input_dims)
        dataset = build_branch_dataset(samples, train_cfg.crop_dims,
                                       seed=train_cfg.seed,
                                       crops_per_cell=args.crops_per_cell)
        model = BranchModel(model_cfg, seed=train_cfg.seed)
        if args.from_checkpoint is not None:
            manifest = transfer_weights(args.from_checkpoint, model)
            print(f"transferred {len(manifest['transferred'])} tensors from "
                  f"{args.from_checkpoint}; {len(manifest['fresh'])} fresh")

    print(f"training {args.stage} stage: {len(dataset)} items, "
          f"{train_cfg.epochs} epochs, variant {model_cfg.variant}")
    result = train_stage(model, dataset, train_cfg, out_dir=args.out,
                         log=None if args.quiet else print)
    print(f"best loss {result['best_loss']:.4f} at epoch "
          f"{result['best_epoch']}; checkpoints in {args.out}")
    return 0


def _parse_point(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"point {text!r} must be 'x,y,z'")
    return tuple(int(round(float(p))) for p in parts)


def _cmd_infer(args) -> int:
    model, meta = load_trained_model(args.checkpoint)
    volume = _load_volume(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if meta["stage"] == "soma":
        prob = sliding_window_infer(model, volume, overlap=args.overlap)
        somas = extract_somas(prob, args.threshold, args.min_size)
        write_v3d(out / "soma_prob.v3d", prob.astype(np.float32))
        (out / "somas.json").write_text(
            json.dumps({"somas": [list(s) for s in somas]}, indent=1))
        print(f"found {len(somas)} somas; wrote soma_prob.v3d and "
              f"somas.json to {out}")
        return 0

    points = [_parse_point(p) for p in args.point or []]
    if args.somas is not None:
        loaded = json.loads(Path(args.somas).read_text())["somas"]
        points.extend(tuple(int(v) for v in p) for p in loaded)
    if not points:
        raise ValueError("branch checkpoint needs at least one prompt: "
                         "pass --point x,y,z or --somas somas.json")
    for i, pt in enumerate(points):
        mask = segment_cell(model, volume, pt, threshold=args.threshold)
        write_v3d(out / f"cell_{i:03d}.v3d", mask.astype(np.uint8))
    print(f"segmented {len(points)} cells; wrote cell_*.v3d to {out}")
    return 0


def _cmd_eval(args) -> int:
    model, meta = load_trained_model(args.checkpoint)
    samples = [load_sample(p) for p in _sample_dirs(args.data)]
    if meta["stage"] == "soma":
        predictor = make_soma_predictor(model, overlap=args.overlap,
                                        threshold=args.threshold,
                                        min_size=args.min_size)
        report = evaluate_soma(samples, predictor, radius=args.radius)
    else:
        predictor = make_branch_predictor(model, threshold=args.threshold)
        report = evaluate_branch(samples, predictor)
    if args.out is not None:
        Path(args.out).write_text(json.dumps(report, indent=1))
    summary = "  ".join(f"{k} {v['mean']:.3f}+-{v['std']:.3f}"
                        for k, v in sorted(report["aggregate"].items()))
    print(f"{meta['stage']} eval over {len(samples)} volumes: {summary}")
    return 0


def _cmd_params(args) -> int:
    cfg = ModelConfig.for_variant(args.variant)
    counts = count_parameters(BranchModel(cfg, seed=0))
    for name in ("encoder", "skips", "decoder", "prompt", "total"):
        print(f"{name:8s} {counts[name]:>12,d}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arborseg",
        description="Two-stage prompt-driven 3D segmentation of branching "
                    "cells in volumetric microscopy.")
    parser.add_argument("--backend", choices=("numba", "numpy"),
                        help="kernel backend (default: numba, or "
                             "ARBORSEG_BACKEND)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, required=True,
                   help="number of volumes")
    p.add_argument("--config", help="JSON config file (synth section)")
    p.add_argument("--seed", type=int, help="override synth.seed")
    p.add_argument("--dims", type=int, nargs=3, metavar=("W", "H", "D"),
                   help="override synth.dims")
    p.add_argument("--overlap-volumes", type=float, default=0.0,
                   help="fraction of volumes forced to contain two "
                        "overlapping cells")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one stage on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--stage", choices=("soma", "branch"), required=True)
    p.add_argument("--config", help="JSON config file; without it the "
                                    "desk-scale schedule is used")
    p.add_argument("--variant", choices=("tiny", "s", "m", "l"),
                   help="override model variant")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--from-checkpoint",
                   help="soma checkpoint to transfer encoder/decoder "
                        "weights from (branch stage)")
    p.add_argument("--min-foreground", type=float, default=0.0,
                   help="drop soma tiles below this foreground fraction")
    p.add_argument("--crops-per-cell", type=int, default=1,
                   help="jittered crops per cell (branch stage)")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-epoch logging")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="run a checkpoint on one volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True,
                   help="a .v3d volume or a sample directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--overlap", type=float, default=0.5,
                   help="tile overlap fraction (soma stage)")
    p.add_argument("--min-size", type=int, default=10,
                   help="minimum component size in voxels (soma stage)")
    p.add_argument("--point", action="append", metavar="X,Y,Z",
                   help="prompt point; repeatable (branch stage)")
    p.add_argument("--somas", help="somas.json from a soma inference run "
                                   "(branch stage)")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--min-size", type=int, default=10)
    p.add_argument("--radius", type=float, default=5.0,
                   help="detection matching radius in voxels")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("params", help="print parameter counts for a variant")
    p.add_argument("--variant", choices=("tiny", "s", "m", "l"),
                   default="tiny")
    p.set_defaults(func=_cmd_params)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.backend is not None:
            set_backend(args.backend)
        return args.func(args)
    except (ConfigError, ValueError, RuntimeError, OSError, IndexError,
            KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
