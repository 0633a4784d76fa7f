"""Candidate scoring: localization, pairwise relationships, and the score
table that grounds an expression.

Both scorers share one pipeline: project the input features, gate them
elementwise with a query vector, normalize to unit length, then take a
scalar projection. The localization scorer reads [visual; spatial] features
of one candidate against the subject or object query; the relationship
scorer reads the concatenated spatial features of an ordered candidate pair
against the relation query.

A pair's score is the sum of the subject's localization score, the object's
localization score, and the pair relationship score. A candidate's subject
score is its best pair score over all possible objects, which lets weak
supervision train the relationship scorer without object annotations.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .language import ParsedExpression
from .optim import xavier_init, zeros_param
from .shapeworld import SceneFeatures

__all__ = [
    "MatchParams",
    "LocalizationParams",
    "RelationshipParams",
    "init_localization_params",
    "init_relationship_params",
    "match_scores",
    "loc_score",
    "rel_score",
    "pair_score",
    "ScoreTable",
    "score_table",
]

# Penalty added to diagonal pair scores when self-pairs are excluded from the
# subject max. Large enough to lose every comparison, small enough to stay
# comfortably finite.
_SELF_PAIR_PENALTY = -1e9


@dataclasses.dataclass
class MatchParams:
    """Weights of the shared project/gate/normalize/score pipeline."""

    embed_w: Tensor  # (feature_dim, query_dim): rows index input features
    embed_b: Tensor  # (query_dim,)
    score_w: Tensor  # (query_dim,)
    score_b: Tensor  # scalar

    @property
    def feature_dim(self) -> int:
        return self.embed_w.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.embed_w": self.embed_w,
            f"{prefix}.embed_b": self.embed_b,
            f"{prefix}.score_w": self.score_w,
            f"{prefix}.score_b": self.score_b,
        }


class LocalizationParams(MatchParams):
    pass


class RelationshipParams(MatchParams):
    pass


def _init_match_params(cls, feature_dim: int, query_dim: int, rng: np.random.Generator):
    return cls(
        embed_w=xavier_init((feature_dim, query_dim), rng),
        embed_b=zeros_param(query_dim),
        score_w=xavier_init((query_dim,), rng),
        score_b=zeros_param(()),
    )


def init_localization_params(feature_dim: int, query_dim: int, rng: np.random.Generator) -> LocalizationParams:
    return _init_match_params(LocalizationParams, feature_dim, query_dim, rng)


def init_relationship_params(spatial_dim: int, query_dim: int, rng: np.random.Generator) -> RelationshipParams:
    """The relationship scorer sees only the two spatial vectors, concatenated."""
    return _init_match_params(RelationshipParams, 2 * spatial_dim, query_dim, rng)


@dataclasses.dataclass
class MatchResult:
    scores: Tensor  # (N,)
    normalized: Tensor  # (N, query_dim): unit rows after gating


def match_scores(features: Tensor | np.ndarray, query: Tensor, params: MatchParams) -> MatchResult:
    """Run the pipeline over a batch of feature rows.

    projected = features @ embed_w + embed_b
    gated     = projected * query        (elementwise, row-broadcast)
    unit      = gated / ||gated||        (per row, epsilon-guarded)
    score     = unit . score_w + score_b
    """
    feats = features if isinstance(features, Tensor) else Tensor(features)
    if feats.ndim != 2:
        raise ValueError(f"match_scores expects a feature matrix, got shape {feats.shape}")
    if feats.shape[1] != params.feature_dim:
        raise ValueError(
            f"feature width {feats.shape[1]} does not match parameters ({params.feature_dim})"
        )
    projected = ad.matmul(feats, params.embed_w) + params.embed_b
    gated = projected * query
    unit = ad.l2_normalize(gated, axis=-1)
    scores = ad.matmul(unit, params.score_w) + params.score_b
    return MatchResult(scores=scores, normalized=unit)


def loc_score(features: np.ndarray | Tensor, query: Tensor, params: LocalizationParams) -> Tensor:
    """Score one candidate's [visual; spatial] features against a query."""
    feats = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
    if feats.ndim != 1:
        raise ValueError(f"loc_score expects a single feature vector, got shape {feats.shape}")
    result = match_scores(ad.reshape(feats, (1, feats.shape[0])), query, params)
    return ad.pick(result.scores, 0)


def rel_score(
    subject_spatial: np.ndarray | Tensor,
    object_spatial: np.ndarray | Tensor,
    query: Tensor,
    params: RelationshipParams,
) -> Tensor:
    """Score one ordered candidate pair from its two spatial vectors."""
    a = subject_spatial if isinstance(subject_spatial, Tensor) else Tensor(np.asarray(subject_spatial))
    b = object_spatial if isinstance(object_spatial, Tensor) else Tensor(np.asarray(object_spatial))
    pair = ad.concat([a, b])
    result = match_scores(ad.reshape(pair, (1, pair.shape[0])), query, params)
    return ad.pick(result.scores, 0)


def pair_score(
    subject_features: np.ndarray | Tensor,
    object_features: np.ndarray | Tensor,
    subject_spatial: np.ndarray | Tensor,
    object_spatial: np.ndarray | Tensor,
    parsed: ParsedExpression,
    loc_params: LocalizationParams,
    rel_params: RelationshipParams,
) -> Tensor:
    """Full score of one ordered pair: subject loc + object loc + relation."""
    s = loc_score(subject_features, parsed.subject_vec, loc_params)
    o = loc_score(object_features, parsed.object_vec, loc_params)
    r = rel_score(subject_spatial, object_spatial, parsed.relation_vec, rel_params)
    return s + o + r


@dataclasses.dataclass
class ScoreTable:
    """All pair scores for one expression over one candidate set.

    ``pair_scores[i, j]`` scores candidate i as subject and j as object.
    ``subject_scores[i]`` is the row maximum (over the allowed objects).
    ``best_pair`` maximizes the pair score; ties resolve to the smallest
    flat row-major index.
    """

    pair_scores: Tensor
    subject_scores: Tensor
    best_pair: tuple[int, int]

    @property
    def n_candidates(self) -> int:
        return self.pair_scores.shape[0]

    @property
    def best_subject(self) -> int:
        return self.best_pair[0]

    def object_score_map(self) -> np.ndarray:
        """Per-candidate best score as the object; for inspection only."""
        return self.pair_scores.values.max(axis=0)


def score_table(
    features: SceneFeatures,
    parsed: ParsedExpression,
    loc_params: LocalizationParams,
    rel_params: RelationshipParams,
    exclude_self_pairs: bool = False,
) -> ScoreTable:
    """Score every ordered candidate pair for one parsed expression.

    ``exclude_self_pairs`` drops (i, i) pairs from the subject max and the
    best-pair search; the stored pair matrix always holds the raw scores.
    """
    n = features.n_candidates
    subject_loc = match_scores(Tensor(features.matrix), parsed.subject_vec, loc_params).scores
    object_loc = match_scores(Tensor(features.matrix), parsed.object_vec, loc_params).scores
    relation = match_scores(Tensor(features.pair_matrix), parsed.relation_vec, rel_params).scores
    pair = (
        ad.reshape(relation, (n, n))
        + ad.reshape(subject_loc, (n, 1))
        + ad.reshape(object_loc, (1, n))
    )
    ranked = pair
    if exclude_self_pairs:
        ranked = pair + Tensor(np.eye(n) * _SELF_PAIR_PENALTY)
    subject_scores = ad.reduce_max(ranked, axis=1)
    flat_best = int(np.argmax(ranked.values))
    best_pair = (flat_best // n, flat_best % n)
    return ScoreTable(pair_scores=pair, subject_scores=subject_scores, best_pair=best_pair)
