"""Smoke and determinism checks for the experiment driver."""

import json

from relground.checkpoint import load_checkpoint
from relground.experiments import ExperimentSpec, run_experiment
from relground.shapeworld import ShapeWorldConfig
from relground.training import TrainConfig

TINY_SPEC = ExperimentSpec(
    data=ShapeWorldConfig(
        grid_size=3,
        seed=5,
        expressions_per_scene=2,
        min_shapes=4,
        max_shapes=6,
        retry_budget=5000,
    ),
    train=TrainConfig(
        model="cmn",
        supervision="weak",
        iterations=6,
        embed_dim=8,
        hidden_dim=6,
        seed=2,
        log_every=2,
        eval_every=3,
    ),
    n_train=8,
    n_test=3,
)


def test_run_experiment_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    result = run_experiment(TINY_SPEC, out_dir=out, save_data=True)

    for name in ("model.ckpt", "report.jsonl", "experiment.json", "metrics.jsonl",
                 "train.jsonl", "test.jsonl"):
        assert (out / name).exists(), name

    assert len(result.train_data) == 8
    assert len(result.test_data) == 3
    assert result.report.n_expressions == 6
    assert result.checkpoint_path == out / "model.ckpt"

    ckpt = load_checkpoint(result.checkpoint_path)
    assert ckpt.header["step_count"] == 6

    report_lines = (out / "report.jsonl").read_text(encoding="utf-8").splitlines()
    records = [json.loads(line) for line in report_lines]
    assert records[0]["n_expressions"] == 6
    assert len(records) == 7

    metric_steps = [
        json.loads(line)["step"]
        for line in (out / "metrics.jsonl").read_text(encoding="utf-8").splitlines()
    ]
    assert metric_steps == [2, 3, 4, 6]


def test_experiment_spec_json_roundtrip(tmp_path):
    out = tmp_path / "run"
    run_experiment(TINY_SPEC, out_dir=out)
    stored = json.loads((out / "experiment.json").read_text(encoding="utf-8"))
    assert ExperimentSpec.from_dict(stored) == TINY_SPEC


def test_run_experiment_deterministic():
    first = run_experiment(TINY_SPEC)
    second = run_experiment(TINY_SPEC)
    assert first.report.to_records() == second.report.to_records()
    assert first.train_result.final_loss == second.train_result.final_loss
    params_a = first.train_result.model.named_parameters()
    params_b = second.train_result.model.named_parameters()
    assert params_a.keys() == params_b.keys()
    for name, tensor in params_a.items():
        assert (tensor.values == params_b[name].values).all(), name
