"""End-to-end experiment driver: generate data, train, evaluate, persist.

Given one spec this produces a checkpoint, a metrics stream, and an
evaluation report on the held-out split. Identical specs produce identical
reports; every random choice derives from the spec seeds.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib

from .checkpoint import save_checkpoint
from .evaluation import EvalReport, evaluate
from .language import Vocabulary
from .model import prepare_dataset
from .shapeworld import Dataset, ShapeWorldConfig, generate_split_dataset, save_dataset, template_vocabulary
from .training import TrainConfig, TrainResult, train

__all__ = ["ExperimentSpec", "ExperimentResult", "run_experiment"]


@dataclasses.dataclass(frozen=True)
class ExperimentSpec:
    data: ShapeWorldConfig = ShapeWorldConfig()
    train: TrainConfig = TrainConfig()
    n_train: int = 3000
    n_test: int = 500
    test_fraction: float = 0.1

    def to_dict(self) -> dict:
        return {
            "data": self.data.to_dict(),
            "train": self.train.to_dict(),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "test_fraction": self.test_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(
            data=ShapeWorldConfig.from_dict(d.get("data", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            n_train=int(d.get("n_train", 3000)),
            n_test=int(d.get("n_test", 500)),
            test_fraction=float(d.get("test_fraction", 0.1)),
        )


@dataclasses.dataclass
class ExperimentResult:
    spec: ExperimentSpec
    train_result: TrainResult
    report: EvalReport
    train_data: Dataset
    test_data: Dataset
    checkpoint_path: pathlib.Path | None = None


def run_experiment(spec: ExperimentSpec, out_dir=None, save_data: bool = False) -> ExperimentResult:
    train_data, test_data = generate_split_dataset(
        spec.data, spec.n_train, spec.n_test, spec.test_fraction
    )
    vocab = Vocabulary(template_vocabulary(spec.data.colors))
    train_scenes = prepare_dataset(train_data, vocab)
    test_scenes = prepare_dataset(test_data, vocab)
    feature_dim = train_scenes[0].features.matrix.shape[1]

    out = pathlib.Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl" if out is not None else None

    result = train(
        spec.train,
        train_scenes,
        vocab,
        feature_dim,
        eval_scenes=test_scenes,
        metrics_path=metrics_path,
    )
    report = evaluate(result.model, test_scenes)

    checkpoint_path = None
    if out is not None:
        checkpoint_path = out / "model.ckpt"
        save_checkpoint(
            checkpoint_path,
            result.model,
            optimizer=result.optimizer,
            train_config=spec.train,
            data_config=spec.data,
        )
        with open(out / "report.jsonl", "w", encoding="utf-8") as fh:
            for record in report.to_records():
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        with open(out / "experiment.json", "w", encoding="utf-8") as fh:
            json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        if save_data:
            save_dataset(train_data, out / "train.jsonl")
            save_dataset(test_data, out / "test.jsonl")
    return ExperimentResult(
        spec=spec,
        train_result=result,
        report=report,
        train_data=train_data,
        test_data=test_data,
        checkpoint_path=checkpoint_path,
    )
