import numpy as np
import pytest

from relground.autodiff import Tape, no_grad, use_tape
from relground.language import Vocabulary
from relground.model import (
    SPATIAL_DIM,
    BaselineLocModel,
    CmnModel,
    ModelConfig,
    prepare_dataset,
    prepare_scene,
)


def small_model(vocab, feature_dim=16, seed=0, **overrides):
    cfg = ModelConfig(embed_dim=8, hidden_dim=6, **overrides)
    return CmnModel(vocab, feature_dim, cfg, seed=seed)


def test_named_parameter_inventory(tiny_vocab):
    model = small_model(tiny_vocab)
    names = set(model.named_parameters())
    assert "lang.embedding" in names
    # four LSTM directions with four weight matrices and four biases each
    lstm = [n for n in names if ".lstm" in n]
    assert len(lstm) == 4 * 8
    for head in ("subject", "relation", "object"):
        assert f"lang.attend_{head}" in names
    for prefix in ("loc", "rel"):
        for leaf in ("embed_w", "embed_b", "score_w", "score_b"):
            assert f"{prefix}.{leaf}" in names
    assert all(t.requires_grad for t in model.named_parameters().values())


def test_parameter_shapes_follow_config(tiny_vocab):
    model = small_model(tiny_vocab, feature_dim=16)
    params = model.named_parameters()
    assert params["lang.embedding"].shape == (len(tiny_vocab), 8)
    assert params["loc.embed_w"].shape == (16, 8)
    assert params["rel.embed_w"].shape == (2 * SPATIAL_DIM, 8)
    assert params["lang.attend_subject"].shape == (4 * 6,)
    assert params["loc.score_b"].shape == ()


def test_same_seed_same_init_different_seed_different(tiny_vocab):
    a = small_model(tiny_vocab, seed=4).named_parameters()
    b = small_model(tiny_vocab, seed=4).named_parameters()
    c = small_model(tiny_vocab, seed=5).named_parameters()
    for name in a:
        assert np.array_equal(a[name].values, b[name].values), name
    assert any(not np.array_equal(a[n].values, c[n].values) for n in a)


def test_score_expression_shapes(tiny_vocab, tiny_scenes):
    scene = tiny_scenes[0]
    model = small_model(tiny_vocab, feature_dim=scene.features.matrix.shape[1])
    expr = scene.expressions[0]
    with use_tape(Tape()), no_grad():
        table = model.score_expression(expr.token_ids, scene.features)
    n = scene.features.n_candidates
    assert table.pair_scores.values.shape == (n, n)
    assert table.subject_scores.values.shape == (n,)
    i, j = table.best_pair
    assert 0 <= i < n and 0 <= j < n


def test_feature_width_mismatch_is_rejected(tiny_vocab, tiny_scenes):
    scene = tiny_scenes[0]
    model = small_model(tiny_vocab, feature_dim=99)
    with pytest.raises(ValueError, match="width"):
        model.score_expression(scene.expressions[0].token_ids, scene.features)
    baseline = BaselineLocModel(tiny_vocab, 99, ModelConfig(embed_dim=8, hidden_dim=6))
    with pytest.raises(ValueError, match="width"):
        baseline.candidate_scores(scene.expressions[0].token_ids, scene.features)


def test_exclude_self_pairs_config_forbids_diagonal(tiny_vocab, tiny_scenes):
    scene = tiny_scenes[0]
    width = scene.features.matrix.shape[1]
    model = small_model(tiny_vocab, feature_dim=width, exclude_self_pairs=True)
    with use_tape(Tape()), no_grad():
        table = model.score_expression(scene.expressions[0].token_ids, scene.features)
    assert table.best_pair[0] != table.best_pair[1]


def test_training_forward_consumes_dropout_stream(tiny_vocab, tiny_scenes):
    scene = tiny_scenes[0]
    width = scene.features.matrix.shape[1]
    model = small_model(tiny_vocab, feature_dim=width)
    ids = scene.expressions[0].token_ids
    with use_tape(Tape()), no_grad():
        first = model.score_expression(ids, scene.features, training=True)
        second = model.score_expression(ids, scene.features, training=True)
        sober = model.score_expression(ids, scene.features, training=False)
        sober2 = model.score_expression(ids, scene.features, training=False)
    # per-call dropout masks differ; evaluation is mask-free and repeatable
    assert not np.array_equal(first.pair_scores.values, second.pair_scores.values)
    assert np.array_equal(sober.pair_scores.values, sober2.pair_scores.values)


def test_prepare_scene_indexes_cells_row_major(tiny_dataset, tiny_vocab):
    record = tiny_dataset.scenes[0]
    prepared = prepare_scene(record, tiny_vocab, tiny_dataset.config)
    g = record.scene.grid_size
    for expr, raw in zip(prepared.expressions, record.expressions):
        r, c = raw.subject_cell
        assert expr.subject_index == r * g + c
        assert raw.object_cell is not None
        r, c = raw.object_cell
        assert expr.object_index == r * g + c
        assert tiny_vocab.decode(expr.token_ids) == list(raw.tokens)


def test_prepare_dataset_covers_every_scene(tiny_dataset, tiny_vocab):
    prepared = prepare_dataset(tiny_dataset, tiny_vocab)
    assert len(prepared) == len(tiny_dataset)
    assert all(p.features.matrix.shape == prepared[0].features.matrix.shape for p in prepared)


def test_baseline_scores_every_candidate(tiny_vocab, tiny_scenes):
    scene = tiny_scenes[0]
    width = scene.features.matrix.shape[1]
    baseline = BaselineLocModel(tiny_vocab, width, ModelConfig(embed_dim=8, hidden_dim=6))
    with use_tape(Tape()), no_grad():
        scores = baseline.candidate_scores(scene.expressions[0].token_ids, scene.features)
    assert scores.values.shape == (scene.features.n_candidates,)
    names = set(baseline.named_parameters())
    assert any(n.startswith("enc.") for n in names)
    assert not any(n.startswith("rel.") for n in names)
