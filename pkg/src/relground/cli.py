"""Command-line harness.

Subcommands: generate, train, eval, inspect, grad-check. Every subcommand
accepts --config (a JSON file of defaults), --seed, and --out; explicit
flags override config-file values. Errors print to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

from .checkpoint import (
    data_config_from_checkpoint,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from .evaluation import evaluate, evaluate_baseline_pair, inspect_expression
from .gradcheck import run_micro_gradcheck
from .language import Vocabulary
from .model import prepare_dataset
from .shapeworld import (
    Dataset,
    ShapeWorldConfig,
    generate_dataset,
    generate_split_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .training import TrainConfig, train

__all__ = ["main"]


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _data_config(args, cfg: dict) -> ShapeWorldConfig:
    merged = dict(cfg.get("data", {}))
    overrides = {
        "n_scenes": args.n_scenes,
        "grid_size": args.grid_size,
        "seed": args.seed,
        "expressions_per_scene": args.expressions_per_scene,
        "min_shapes": args.min_shapes,
        "max_shapes": args.max_shapes,
        "feature_mode": args.feature_mode,
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return ShapeWorldConfig.from_dict(merged)


def _cmd_generate(args) -> int:
    cfg = _load_config_file(args.config)
    data_config = _data_config(args, cfg)
    n_train = args.n_train if args.n_train is not None else cfg.get("n_train")
    n_test = args.n_test if args.n_test is not None else cfg.get("n_test")
    if (n_train is None) != (n_test is None):
        raise ValueError("--n-train and --n-test must be given together")
    if n_train is not None:
        train_data, test_data = generate_split_dataset(
            data_config, int(n_train), int(n_test), args.test_fraction
        )
        combined = Dataset(data_config, train_data.scenes + test_data.scenes)
        combined.scenes.sort(key=lambda r: r.scene.scene_id)
        save_dataset(combined, args.out)
        print(f"wrote {len(train_data)} train + {len(test_data)} test scenes to {args.out}")
    else:
        dataset = generate_dataset(data_config)
        save_dataset(dataset, args.out)
        print(f"wrote {len(dataset)} scenes to {args.out}")
    return 0


def _train_config(args, cfg: dict) -> TrainConfig:
    merged = dict(cfg.get("train", {}))
    overrides = {
        "model": args.model,
        "supervision": args.supervision,
        "seed": args.seed,
        "iterations": args.iterations,
        "learning_rate": args.learning_rate,
        "hidden_dim": args.hidden_dim,
        "embed_dim": args.embed_dim,
        "baseline_target": args.baseline_target,
        "eval_every": args.eval_every,
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return TrainConfig.from_dict(merged)


def _cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    train_config = _train_config(args, cfg)
    dataset = load_dataset(args.dataset)
    train_records, test_records = split_dataset(dataset, args.test_fraction)
    if not train_records:
        raise ValueError("dataset has no training scenes under the split")
    vocab = Vocabulary(sorted({t for r in dataset.scenes for e in r.expressions for t in e.tokens}))
    train_scenes = prepare_dataset(Dataset(dataset.config, train_records), vocab)
    test_scenes = prepare_dataset(Dataset(dataset.config, test_records), vocab) if test_records else None
    feature_dim = train_scenes[0].features.matrix.shape[1]

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(
        train_config,
        train_scenes,
        vocab,
        feature_dim,
        eval_scenes=test_scenes,
        metrics_path=out / "metrics.jsonl",
    )
    ckpt_path = out / "model.ckpt"
    save_checkpoint(
        ckpt_path,
        result.model,
        optimizer=result.optimizer,
        train_config=train_config,
        data_config=dataset.config,
    )
    print(f"trained {train_config.model} for {train_config.iterations} iterations")
    print(f"final training loss {result.final_loss:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _prepared_split(args, ckpt):
    dataset = load_dataset(args.dataset)
    data_config = data_config_from_checkpoint(ckpt) or dataset.config
    if data_config.feature_mode != dataset.config.feature_mode:
        raise ValueError(
            f"checkpoint was trained on {data_config.feature_mode!r} features, "
            f"dataset is {dataset.config.feature_mode!r}"
        )
    train_records, test_records = split_dataset(dataset, args.test_fraction)
    chosen = {"train": train_records, "test": test_records, "all": dataset.scenes}[args.split]
    if not chosen:
        raise ValueError(f"no scenes in split {args.split!r}")
    vocab = Vocabulary(ckpt.header["vocab"])
    return prepare_dataset(Dataset(dataset.config, chosen), vocab)


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    scenes = _prepared_split(args, ckpt)
    if args.object_checkpoint is not None:
        obj_ckpt = load_checkpoint(args.object_checkpoint)
        obj_model = restore_model(obj_ckpt)
        report = evaluate_baseline_pair(model, obj_model, scenes)
    else:
        report = evaluate(model, scenes)
    pair = "n/a" if report.p_at_1_pair is None else f"{report.p_at_1_pair:.4f}"
    print(f"expressions evaluated: {report.n_expressions}")
    print(f"P@1 (subject): {report.p_at_1_subj:.4f}")
    print(f"P@1 (pair):    {pair}")
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            for record in report.to_records():
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        print(f"report: {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    if model.kind != "cmn":
        raise ValueError("inspect needs a compositional model checkpoint")
    scenes = _prepared_split(args, ckpt)
    by_id = {s.scene_id: s for s in scenes}
    scene = by_id.get(args.scene_id) if args.scene_id else scenes[0]
    if scene is None:
        raise ValueError(f"scene {args.scene_id!r} not found in split {args.split!r}")
    if not 0 <= args.expression_index < len(scene.expressions):
        raise ValueError(f"scene {scene.scene_id} has {len(scene.expressions)} expressions")
    record = inspect_expression(model, scene, args.expression_index)
    print(f"scene {scene.scene_id}: {' '.join(record['tokens'])}")
    print(record["grid"])
    for head in ("subject", "relation", "object"):
        weights = record[f"{head}_attention"]
        shown = " ".join(f"{t}:{w:.2f}" for t, w in zip(record["tokens"], weights))
        print(f"{head:>8} attention: {shown}")
    print(f"predicted subject cell {record['predicted_subject_cell']}, "
          f"object cell {record['predicted_object_cell']}")
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        print(f"dump: {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    report = run_micro_gradcheck(seed=args.seed if args.seed is not None else 17, step=args.step)
    print(f"checked {report.n_entries} parameter entries")
    print(f"max relative error: {report.max_error:.3e} (tolerance {args.tolerance:.1e})")
    if not report.passed(args.tolerance):
        worst = sorted(report.per_param.items(), key=lambda kv: -kv[1])[:5]
        for name, err in worst:
            print(f"  {name}: {err:.3e}")
        print("FAIL")
        return 1
    print("OK")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relground", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of default options")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("generate", help="generate a synthetic dataset file")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-scenes", type=int, default=None)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("--expressions-per-scene", type=int, default=None)
    p.add_argument("--min-shapes", type=int, default=None)
    p.add_argument("--max-shapes", type=int, default=None)
    p.add_argument("--feature-mode", choices=["symbolic", "raster"], default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset file")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", choices=["cmn", "baseline"], default=None)
    p.add_argument("--supervision", choices=["weak", "strong"], default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--baseline-target", choices=["subject", "object"], default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--object-checkpoint", default=None,
                   help="second baseline checkpoint for combined pair prediction")
    p.add_argument("--out", default=None, help="report JSONL path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="dump attention and score maps for one expression")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--scene-id", default=None)
    p.add_argument("--expression-index", type=int, default=0)
    p.add_argument("--out", default=None, help="dump JSONL path")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("grad-check", help="finite-difference check on a seeded micro problem")
    common(p)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a one-line diagnostic, exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
