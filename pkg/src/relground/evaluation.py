"""Held-out evaluation and inspection dumps.

Precision at 1 for subjects counts expressions whose top-scoring subject
candidate is the annotated subject cell; the pair variant additionally
requires the predicted object to match. The baseline has no object
prediction of its own, but two independently trained baselines (one
targeting subjects, one targeting objects) can be combined into a pair
prediction for comparison.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .model import BaselineLocModel, CmnModel, PreparedScene
from .shapeworld import render_scene_grid

__all__ = [
    "ExpressionOutcome",
    "EvalReport",
    "evaluate",
    "evaluate_baseline_pair",
    "attention_record",
    "inspect_expression",
]


@dataclasses.dataclass(frozen=True)
class ExpressionOutcome:
    scene_id: str
    expression_index: int
    predicted_subject: int
    predicted_object: int | None
    gt_subject: int
    gt_object: int | None
    subject_correct: bool
    pair_correct: bool | None

    def to_record(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class EvalReport:
    n_expressions: int
    p_at_1_subj: float
    p_at_1_pair: float | None
    outcomes: tuple[ExpressionOutcome, ...]

    def to_records(self) -> list[dict]:
        summary = {
            "n_expressions": self.n_expressions,
            "p_at_1_subj": self.p_at_1_subj,
            "p_at_1_pair": self.p_at_1_pair,
        }
        return [summary] + [o.to_record() for o in self.outcomes]


def _report_from_outcomes(outcomes: list[ExpressionOutcome]) -> EvalReport:
    if not outcomes:
        raise ValueError("cannot evaluate an empty scene list")
    subj = float(np.mean([o.subject_correct for o in outcomes]))
    paired = [o.pair_correct for o in outcomes if o.pair_correct is not None]
    pair = float(np.mean(paired)) if paired else None
    return EvalReport(
        n_expressions=len(outcomes),
        p_at_1_subj=subj,
        p_at_1_pair=pair,
        outcomes=tuple(outcomes),
    )


def evaluate(model, scenes: list[PreparedScene]) -> EvalReport:
    """Score every expression with gradients disabled and tally precision."""
    outcomes: list[ExpressionOutcome] = []
    with ad.no_grad():
        for scene in scenes:
            for k, expr in enumerate(scene.expressions):
                if isinstance(model, BaselineLocModel):
                    scores = model.candidate_scores(expr.token_ids, scene.features)
                    pred_subject = int(np.argmax(scores.values))
                    pred_object = None
                    pair_correct = None
                else:
                    table = model.score_expression(expr.token_ids, scene.features, training=False)
                    pred_subject, pred_object = table.best_pair
                    pair_correct = (
                        (pred_subject, pred_object) == (expr.subject_index, expr.object_index)
                        if expr.object_index is not None
                        else None
                    )
                outcomes.append(
                    ExpressionOutcome(
                        scene_id=scene.scene_id,
                        expression_index=k,
                        predicted_subject=pred_subject,
                        predicted_object=pred_object,
                        gt_subject=expr.subject_index,
                        gt_object=expr.object_index,
                        subject_correct=pred_subject == expr.subject_index,
                        pair_correct=pair_correct,
                    )
                )
    return _report_from_outcomes(outcomes)


def evaluate_baseline_pair(
    subject_model: BaselineLocModel,
    object_model: BaselineLocModel,
    scenes: list[PreparedScene],
) -> EvalReport:
    """Pair prediction from two single-candidate baselines."""
    outcomes: list[ExpressionOutcome] = []
    with ad.no_grad():
        for scene in scenes:
            for k, expr in enumerate(scene.expressions):
                subj_scores = subject_model.candidate_scores(expr.token_ids, scene.features)
                obj_scores = object_model.candidate_scores(expr.token_ids, scene.features)
                pred_subject = int(np.argmax(subj_scores.values))
                pred_object = int(np.argmax(obj_scores.values))
                pair_correct = (
                    (pred_subject, pred_object) == (expr.subject_index, expr.object_index)
                    if expr.object_index is not None
                    else None
                )
                outcomes.append(
                    ExpressionOutcome(
                        scene_id=scene.scene_id,
                        expression_index=k,
                        predicted_subject=pred_subject,
                        predicted_object=pred_object,
                        gt_subject=expr.subject_index,
                        gt_object=expr.object_index,
                        subject_correct=pred_subject == expr.subject_index,
                        pair_correct=pair_correct,
                    )
                )
    return _report_from_outcomes(outcomes)


def attention_record(model: CmnModel, scene: PreparedScene, expression_index: int) -> dict:
    """Tokens plus the three attention weight vectors for one expression."""
    expr = scene.expressions[expression_index]
    with ad.no_grad():
        parsed = model.parse(expr.token_ids, training=False)
    maps = parsed.attention_arrays()
    return {
        "scene_id": scene.scene_id,
        "expression_index": expression_index,
        "tokens": list(expr.tokens),
        "subject_attention": maps["subject"].tolist(),
        "relation_attention": maps["relation"].tolist(),
        "object_attention": maps["object"].tolist(),
    }


def inspect_expression(model: CmnModel, scene: PreparedScene, expression_index: int) -> dict:
    """Full diagnostic record: attention, score maps, prediction, and grid."""
    if not isinstance(model, CmnModel):
        raise ValueError("inspect needs the compositional model")
    expr = scene.expressions[expression_index]
    with ad.no_grad():
        table = model.score_expression(expr.token_ids, scene.features, training=False)
    record = attention_record(model, scene, expression_index)
    pred_subject, pred_object = table.best_pair
    cells = scene.features.cells
    marks = {cells[pred_subject]: "*"}
    marks[cells[pred_object]] = "+" if cells[pred_object] not in marks else "*"
    record.update(
        {
            "template_parts": dict(expr.template_parts),
            "subject_scores": table.subject_scores.values.tolist(),
            "object_scores": table.object_score_map().tolist(),
            "pair_scores": table.pair_scores.values.tolist(),
            "best_pair": [pred_subject, pred_object],
            "predicted_subject_cell": list(cells[pred_subject]),
            "predicted_object_cell": list(cells[pred_object]),
            "gt_subject": expr.subject_index,
            "gt_object": expr.object_index,
            "grid": render_scene_grid(scene.record.scene, marks),
        }
    )
    return record
