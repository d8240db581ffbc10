"""Command-line interface.

Subcommands: ``gen`` (synthetic data), ``train --stage {1|2|3}``, ``infer``,
``eval``, and ``bench``. Every failure prints a single machine-parsable
``error:<Class>: <message>`` line; input/usage problems exit 2, runtime
failures exit 1.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .errors import InputError
from .evaluation import ConfusionMatrix, summarize
from .frames import ClassMap
from .lidar_io import load_sequence, read_labels, save_sequence
from .model import ModelConfig, SequenceModel, make_model
from .synthetic import SyntheticSceneSpec, generate_synthetic_sequence
from .training import TrainConfig, TrainLog, infer_sequence, train_stage1, train_stage2, train_stage3


def _scene_spec(cfg: Config) -> SyntheticSceneSpec:
    return SyntheticSceneSpec(
        num_static=cfg.get_int("static_objects", 3),
        num_moving=cfg.get_int("moving_objects", 2),
        frame_count=cfg.get_int("frames", 10),
        points_per_object=cfg.get_int("points_per_object", 150),
        ground_points=cfg.get_int("ground_points", 600),
        noise_sigma=cfg.get_float("noise_sigma", 0.03),
        extent=cfg.get_float("extent", 12.0),
        object_size_range=(cfg.get_float("size_min", 0.8), cfg.get_float("size_max", 1.8)),
        speed_range=(cfg.get_float("speed_min", 0.35), cfg.get_float("speed_max", 0.8)),
        class_scheme=cfg.get("class_scheme", "basic"),
        speed_threshold=cfg.get_float("speed_threshold", 0.55),
    )


def _class_map(cfg: Config, default: ClassMap) -> ClassMap:
    if "classes" not in cfg:
        return default
    names = tuple(cfg.get("classes").split())
    ignore = frozenset(int(v) for v in cfg.get("ignore_ids", "").split())
    return ClassMap(names, ignore)


def _model_config(cfg: Config, num_classes: int) -> ModelConfig:
    return ModelConfig(
        num_classes=num_classes,
        input_dim=cfg.get_int("input_dim", 1),
        feature_width=cfg.get_int("feature_width", 16),
        attention_hidden=cfg.get_int("attention_hidden", 16),
        refiner_hidden=cfg.get_int("refiner_hidden", 16),
        voxel_unit=cfg.get_float("voxel_unit", 0.3),
        gamma=cfg.get_float("gamma", 128.0),
        k_interp=cfg.get_int("k_interp", 5),
        k_refine=cfg.get_int("k_refine", 5),
        alpha=cfg.get_float("alpha", 0.5),
        beta=cfg.get_float("beta", 2.0),
        use_height=cfg.get_bool("use_height", True),
    )


def _train_config(cfg: Config, stage: int, seed: int) -> TrainConfig:
    crop = None
    if "crop_extent" in cfg:
        crop = cfg.get_floats("crop_extent")
        if len(crop) != 3:
            raise InputError("crop_extent needs three lengths")
    return TrainConfig(
        stage=stage,
        seed=seed,
        epochs=cfg.get_int("epochs", 2),
        lr=cfg.get_float("lr", 1e-3),
        drop_prob=cfg.get_float("drop_prob", 0.2 if stage != 3 else 0.0),
        focal_gamma=cfg.get_float("focal_gamma", 2.0),
        crop_extent=crop,
    )


def _discover_sequences(data_dir: Path) -> list[Path]:
    if (data_dir / "velodyne").is_dir():
        return [data_dir]
    seqs = sorted(p for p in data_dir.iterdir() if (p / "velodyne").is_dir())
    if not seqs:
        raise InputError(f"{data_dir}: no sequence directories found")
    return seqs


def _cmd_gen(args) -> int:
    cfg = load_config(args.config) if args.config else Config({}, "<defaults>")
    spec = _scene_spec(cfg)
    frames = generate_synthetic_sequence(spec, args.seed)
    out = Path(args.out)
    save_sequence(out, frames)
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else Config({}, "<defaults>")
    if "data_dir" not in cfg:
        raise InputError("train config needs data_dir")
    sequences_dirs = _discover_sequences(Path(cfg.get("data_dir")))
    sequences = [load_sequence(d) for d in sequences_dirs]
    class_map = _class_map(cfg, default=ClassMap(("ground", "static-object", "moving-object")))

    init = cfg.get("init_checkpoint")
    if init is not None:
        model = SequenceModel.load(init)
    elif args.stage == 3:
        raise InputError("stage 3 needs init_checkpoint (a trained stage-2 model)")
    else:
        model = make_model(_model_config(cfg, class_map.num_classes), class_map,
                           np.random.default_rng(args.seed))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = TrainLog(out / "train_log.jsonl")
    tc = _train_config(cfg, args.stage, args.seed)
    try:
        if args.stage == 1:
            frames = [f for seq in sequences for f in seq]
            train_stage1(frames, model, tc, log)
        elif args.stage == 2:
            val_dir = cfg.get("val_dir")
            val = None
            if val_dir:
                val = [load_sequence(d) for d in _discover_sequences(Path(val_dir))]
            train_stage2(sequences, model, tc, log, val_sequences=val)
        else:
            from .training import PseudoCache

            cache = PseudoCache(out / "pseudo_cache")
            train_stage3(sequences, model, tc, log, cache)
    finally:
        log.close()
    ckpt = out / f"stage{args.stage}.ckpt"
    model.save(ckpt)
    from .report import write_loss_curve

    write_loss_curve(out, log.records)
    print(f"stage {args.stage} done: {len(log.losses())} steps, "
          f"final loss {log.losses()[-1]:.4f}, checkpoint {ckpt}")
    return 0


def _cmd_infer(args) -> int:
    model = SequenceModel.load(args.checkpoint)
    frames = load_sequence(Path(args.data))
    predictions = infer_sequence(model, frames, refine=not args.no_refine)
    out = Path(args.out)
    from .lidar_io import write_labels

    for i, pred in enumerate(predictions):
        write_labels(out / "predictions" / f"{i:06d}.label", pred.class_ids.astype(np.uint32))
    print(f"wrote {len(predictions)} prediction files to {out / 'predictions'}")
    return 0


def _cmd_eval(args) -> int:
    pred_dir = Path(args.predictions)
    label_dir = Path(args.labels)
    if (label_dir / "labels").is_dir():
        label_dir = label_dir / "labels"
    pred_files = sorted(pred_dir.glob("*.label"))
    if not pred_files:
        raise InputError(f"{pred_dir}: no .label files")
    cfg = load_config(args.config) if args.config else Config({}, "<defaults>")

    pairs = []
    for pf in pred_files:
        lf = label_dir / pf.name
        if not lf.exists():
            raise InputError(f"missing ground-truth file {lf}")
        pairs.append((read_labels(pf), read_labels(lf)))
    max_id = max(max(int(p.max(initial=0)), int(t.max(initial=0))) for p, t in pairs)
    if "classes" in cfg:
        class_map = _class_map(cfg, default=None)
    else:
        class_map = ClassMap(tuple(f"class_{i}" for i in range(max_id + 1)))
    confusion = ConfusionMatrix.empty(class_map.num_classes)
    for pred, truth in pairs:
        if len(pred) != len(truth):
            raise InputError("prediction/label length mismatch")
        confusion.update(truth, pred, class_map.ignore_ids)
    report = summarize(confusion, class_map)
    for name, iou in sorted(report.iou_by_name().items()):
        print(f"{name} {iou:.4f}")
    print(f"mIoU {report.miou:.4f}")
    if args.out:
        from .report import write_eval_report

        csv_path, png_path = write_eval_report(Path(args.out), report)
        print(f"report: {csv_path} {png_path}")
    return 0


def _cmd_bench(args) -> int:
    from .bench import bench_refiner

    rows = bench_refiner(num_points=args.points, k=args.k, runs=args.runs, seed=args.seed)
    print("operation,points,k,runs,median_ms,p90_ms")
    for row in rows:
        print(f"{row['operation']},{row['points']},{row['k']},{row['runs']},"
              f"{row['median_ms']},{row['p90_ms']}")
    if args.out:
        from .report import write_bench_report

        csv_path, png_path = write_bench_report(Path(args.out), rows)
        print(f"report: {csv_path} {png_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempseg",
        description="Temporal point-cloud segmentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", type=str, default=None, help="key = value config file")
        p.add_argument("--out", type=str, default=None, help="output directory")

    p_gen = sub.add_parser("gen", help="generate a synthetic sequence")
    common(p_gen)
    p_gen.set_defaults(fn=_cmd_gen)

    p_train = sub.add_parser("train", help="run one training stage")
    common(p_train)
    p_train.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p_train.set_defaults(fn=_cmd_train)

    p_infer = sub.add_parser("infer", help="run inference over a sequence")
    common(p_infer)
    p_infer.add_argument("--checkpoint", type=str, required=True)
    p_infer.add_argument("--data", type=str, required=True)
    p_infer.add_argument("--no-refine", action="store_true")
    p_infer.set_defaults(fn=_cmd_infer)

    p_eval = sub.add_parser("eval", help="score predictions against labels")
    common(p_eval)
    p_eval.add_argument("--predictions", type=str, required=True)
    p_eval.add_argument("--labels", type=str, required=True)
    p_eval.set_defaults(fn=_cmd_eval)

    p_bench = sub.add_parser("bench", help="kNN/refiner throughput probes")
    common(p_bench)
    p_bench.add_argument("--points", type=int, default=200_000)
    p_bench.add_argument("--k", type=int, default=5)
    p_bench.add_argument("--runs", type=int, default=20)
    p_bench.set_defaults(fn=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("gen", "train", "infer") and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error:InputError: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surface the class name for machine parsing
        print(f"error:{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
