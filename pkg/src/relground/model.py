"""Full grounding models: parameter containers, forward passes, and the
prepared-scene view that training and evaluation share.

Two models exist. The compositional model parses an expression into
subject/relation/object vectors and scores every ordered candidate pair.
The baseline encodes the whole expression into a single vector and scores
candidates individually, so it has no relationship parameters at all.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tensor
from .language import (
    BaselineEncoderParams,
    ParsedExpression,
    Vocabulary,
    encode_last_state,
    init_baseline_encoder,
    init_language_params,
    parse_expression,
)
from .scoring import (
    LocalizationParams,
    RelationshipParams,
    ScoreTable,
    init_localization_params,
    init_relationship_params,
    match_scores,
    score_table,
)
from .shapeworld import Dataset, SceneFeatures, SceneRecord, ShapeWorldConfig, scene_features

__all__ = [
    "ModelConfig",
    "CmnModel",
    "BaselineLocModel",
    "PreparedExpression",
    "PreparedScene",
    "prepare_scene",
    "prepare_dataset",
    "SPATIAL_DIM",
]

SPATIAL_DIM = 5


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    hidden_dim: int = 64
    dropout_keep: float = 0.7
    exclude_self_pairs: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class CmnModel:
    """Compositional grounding model over a fixed candidate grid."""

    kind = "cmn"

    def __init__(self, vocab: Vocabulary, feature_dim: int, config: ModelConfig, seed: int = 0):
        self.vocab = vocab
        self.feature_dim = int(feature_dim)
        self.config = config
        init_rng = np.random.default_rng([seed, 0])
        self.lang = init_language_params(len(vocab), config.embed_dim, config.hidden_dim, init_rng)
        self.loc = init_localization_params(self.feature_dim, config.embed_dim, init_rng)
        self.rel = init_relationship_params(SPATIAL_DIM, config.embed_dim, init_rng)
        self.dropout_rng = np.random.default_rng([seed, 1])

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"lang.{k}": v for k, v in self.lang.named().items()}
        out.update(self.loc.named("loc"))
        out.update(self.rel.named("rel"))
        return out

    def parse(self, token_ids: np.ndarray, training: bool = False) -> ParsedExpression:
        return parse_expression(
            token_ids,
            self.lang,
            training=training,
            dropout_keep=self.config.dropout_keep,
            rng=self.dropout_rng,
        )

    def score_expression(
        self, token_ids: np.ndarray, features: SceneFeatures, training: bool = False
    ) -> ScoreTable:
        self._check_features(features)
        parsed = self.parse(token_ids, training=training)
        return score_table(
            features, parsed, self.loc, self.rel, exclude_self_pairs=self.config.exclude_self_pairs
        )

    def _check_features(self, features: SceneFeatures) -> None:
        if features.matrix.shape[1] != self.feature_dim:
            raise ValueError(
                f"scene features have width {features.matrix.shape[1]}, "
                f"model expects {self.feature_dim}"
            )


class BaselineLocModel:
    """Localization-only baseline: one query vector, no pair reasoning."""

    kind = "baseline_loc"

    def __init__(self, vocab: Vocabulary, feature_dim: int, config: ModelConfig, seed: int = 0):
        self.vocab = vocab
        self.feature_dim = int(feature_dim)
        self.config = config
        init_rng = np.random.default_rng([seed, 0])
        self.encoder = init_baseline_encoder(len(vocab), config.embed_dim, config.hidden_dim, init_rng)
        self.loc = init_localization_params(self.feature_dim, config.embed_dim, init_rng)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"enc.{k}": v for k, v in self.encoder.named().items()}
        out.update(self.loc.named("loc"))
        return out

    def candidate_scores(self, token_ids: np.ndarray, features: SceneFeatures) -> Tensor:
        if features.matrix.shape[1] != self.feature_dim:
            raise ValueError(
                f"scene features have width {features.matrix.shape[1]}, "
                f"model expects {self.feature_dim}"
            )
        query = encode_last_state(token_ids, self.encoder)
        return match_scores(Tensor(features.matrix), query, self.loc).scores


@dataclasses.dataclass
class PreparedExpression:
    token_ids: np.ndarray
    tokens: tuple[str, ...]
    subject_index: int
    object_index: int | None
    template_parts: dict[str, str]


@dataclasses.dataclass
class PreparedScene:
    scene_id: str
    record: SceneRecord
    features: SceneFeatures
    expressions: list[PreparedExpression]


def prepare_scene(record: SceneRecord, vocab: Vocabulary, data_config: ShapeWorldConfig) -> PreparedScene:
    """Encode tokens and materialize feature matrices once, ahead of training."""
    scene = record.scene
    features = scene_features(
        scene,
        colors=data_config.colors,
        feature_mode=data_config.feature_mode,
        patch_size=data_config.patch_size,
    )
    prepared = []
    for expr in record.expressions:
        prepared.append(
            PreparedExpression(
                token_ids=vocab.encode(expr.tokens),
                tokens=expr.tokens,
                subject_index=scene.cell_index(expr.subject_cell),
                object_index=scene.cell_index(expr.object_cell) if expr.object_cell is not None else None,
                template_parts=expr.template_parts,
            )
        )
    return PreparedScene(scene.scene_id, record, features, prepared)


def prepare_dataset(dataset: Dataset, vocab: Vocabulary) -> list[PreparedScene]:
    return [prepare_scene(record, vocab, dataset.config) for record in dataset.scenes]
