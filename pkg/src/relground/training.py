"""Loss functions and the training loop.

One training iteration consumes one scene: the losses of all of that
scene's expressions are summed (averaging is available behind a flag) and a
single optimizer step follows. Strong supervision applies a softmax loss
over all ordered candidate pairs at the annotated pair; weak supervision
applies it over candidates' subject scores, where each subject score is the
maximum over possible objects, so the object choice stays latent.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import autodiff as ad
from .autodiff import NumericFault, Tensor
from .evaluation import evaluate
from .language import Vocabulary
from .model import BaselineLocModel, CmnModel, ModelConfig, PreparedScene
from .optim import SgdMomentum

__all__ = [
    "TrainingFault",
    "TrainConfig",
    "loss_strong",
    "loss_weak",
    "scene_loss",
    "build_model",
    "TrainResult",
    "train",
]


class TrainingFault(RuntimeError):
    """Training aborted, typically on a non-finite loss or gradient."""


_MODEL_ALIASES = {"baseline": "baseline_loc"}


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; defaults are the desk-scale schedule."""

    model: str = "cmn"
    supervision: str = "weak"
    iterations: int = 20000
    learning_rate: float = 0.005
    momentum: float = 0.95
    decay_factor: float = 0.1
    decay_interval: int = 8000
    seed: int = 0
    embed_dim: int = 64
    hidden_dim: int = 64
    dropout_keep: float = 0.7
    exclude_self_pairs: bool = False
    average_scene_loss: bool = False
    baseline_target: str = "subject"
    log_every: int = 200
    eval_every: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "model", _MODEL_ALIASES.get(self.model, self.model))
        if self.model not in ("cmn", "baseline_loc"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.supervision not in ("weak", "strong"):
            raise ValueError(f"unknown supervision {self.supervision!r}")
        if self.model == "baseline_loc" and self.supervision == "strong":
            raise ValueError("the baseline scores single candidates and cannot train on pair supervision")
        if self.baseline_target not in ("subject", "object"):
            raise ValueError(f"baseline_target must be subject or object, got {self.baseline_target!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError(f"dropout_keep must lie in (0, 1], got {self.dropout_keep}")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """The original large-scale schedule; far beyond desk runtimes."""
        base = dict(iterations=300000, decay_interval=120000, hidden_dim=1000)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            dropout_keep=self.dropout_keep,
            exclude_self_pairs=self.exclude_self_pairs,
        )


def loss_strong(pair_scores: Tensor, gt_pair: tuple[int, int]) -> Tensor:
    """Negative log softmax over all ordered pairs at the annotated pair."""
    if pair_scores.ndim != 2 or pair_scores.shape[0] != pair_scores.shape[1]:
        raise ValueError(f"pair_scores must be square, got shape {pair_scores.shape}")
    n = pair_scores.shape[0]
    i, j = int(gt_pair[0]), int(gt_pair[1])
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"ground-truth pair {gt_pair} out of range for {n} candidates")
    flat = ad.reshape(pair_scores, (n * n,))
    return ad.logsumexp(flat) - ad.pick(flat, i * n + j)


def loss_weak(subject_scores: Tensor, gt_subject: int) -> Tensor:
    """Negative log softmax over candidates at the annotated subject."""
    if subject_scores.ndim != 1:
        raise ValueError(f"subject_scores must be a vector, got shape {subject_scores.shape}")
    i = int(gt_subject)
    if not 0 <= i < subject_scores.shape[0]:
        raise ValueError(f"ground-truth subject {i} out of range")
    return ad.logsumexp(subject_scores) - ad.pick(subject_scores, i)


def scene_loss(model, scene: PreparedScene, config: TrainConfig, training: bool = True) -> Tensor:
    """Summed (or averaged) loss over every expression of one scene."""
    if not scene.expressions:
        raise ValueError(f"scene {scene.scene_id} has no expressions")
    losses = []
    for expr in scene.expressions:
        if isinstance(model, BaselineLocModel):
            scores = model.candidate_scores(expr.token_ids, scene.features)
            target = expr.subject_index if config.baseline_target == "subject" else expr.object_index
            if target is None:
                raise ValueError(f"scene {scene.scene_id}: expression lacks an object annotation")
            losses.append(loss_weak(scores, target))
            continue
        table = model.score_expression(expr.token_ids, scene.features, training=training)
        if config.supervision == "strong":
            if expr.object_index is None:
                raise ValueError(
                    f"scene {scene.scene_id}: strong supervision needs object annotations"
                )
            losses.append(loss_strong(table.pair_scores, (expr.subject_index, expr.object_index)))
        else:
            losses.append(loss_weak(table.subject_scores, expr.subject_index))
    total = losses[0]
    for piece in losses[1:]:
        total = total + piece
    if config.average_scene_loss and len(losses) > 1:
        total = total * (1.0 / len(losses))
    return total


def build_model(config: TrainConfig, vocab: Vocabulary, feature_dim: int):
    mc = config.model_config()
    if config.model == "cmn":
        return CmnModel(vocab, feature_dim, mc, seed=config.seed)
    return BaselineLocModel(vocab, feature_dim, mc, seed=config.seed)


@dataclasses.dataclass
class TrainResult:
    model: object
    optimizer: SgdMomentum
    config: TrainConfig
    metrics: list[dict]

    @property
    def final_loss(self) -> float:
        for record in reversed(self.metrics):
            if record["train_loss"] is not None:
                return record["train_loss"]
        raise ValueError("no loss was recorded")


def train(
    config: TrainConfig,
    train_scenes: list[PreparedScene],
    vocab: Vocabulary,
    feature_dim: int,
    eval_scenes: list[PreparedScene] | None = None,
    metrics_path=None,
) -> TrainResult:
    """Run the full schedule over prepared scenes.

    Scene order reshuffles every epoch from the run seed. A metrics record
    is appended every ``log_every`` steps (and at the last step); held-out
    precision fields are filled every ``eval_every`` steps when evaluation
    scenes are given, and are null otherwise.
    """
    if not train_scenes:
        raise ValueError("train() needs at least one scene")
    model = build_model(config, vocab, feature_dim)
    optimizer = SgdMomentum(
        model.named_parameters(),
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        decay_factor=config.decay_factor,
        decay_interval=config.decay_interval,
    )
    shuffle_rng = np.random.default_rng([config.seed, 2])
    order = shuffle_rng.permutation(len(train_scenes))
    cursor = 0
    metrics: list[dict] = []
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None

    def emit(record: dict) -> None:
        metrics.append(record)
        if sink is not None:
            sink.write(json.dumps(record, sort_keys=True) + "\n")
            sink.flush()

    try:
        for step in range(config.iterations):
            if cursor == len(order):
                order = shuffle_rng.permutation(len(train_scenes))
                cursor = 0
            scene = train_scenes[order[cursor]]
            cursor += 1
            lr_eff = optimizer.effective_lr
            try:
                loss = scene_loss(model, scene, config, training=True)
                loss_value = loss.item()
                ad.backward(loss)
            except NumericFault as exc:
                raise TrainingFault(
                    f"iteration {step}, scene {scene.scene_id}: {exc}"
                ) from exc
            if not np.isfinite(loss_value):
                raise TrainingFault(f"iteration {step}, scene {scene.scene_id}: non-finite loss")
            optimizer.step()
            is_last = step + 1 == config.iterations
            want_eval = (
                eval_scenes is not None
                and config.eval_every > 0
                and ((step + 1) % config.eval_every == 0 or is_last)
            )
            want_log = config.log_every > 0 and (step + 1) % config.log_every == 0
            if want_eval or want_log or is_last:
                record = {
                    "step": step + 1,
                    "lr_eff": lr_eff,
                    "train_loss": loss_value,
                    "p_at_1_subj": None,
                    "p_at_1_pair": None,
                }
                if want_eval:
                    report = evaluate(model, eval_scenes)
                    record["p_at_1_subj"] = report.p_at_1_subj
                    record["p_at_1_pair"] = report.p_at_1_pair
                emit(record)
    finally:
        if sink is not None:
            sink.close()
    return TrainResult(model=model, optimizer=optimizer, config=config, metrics=metrics)
