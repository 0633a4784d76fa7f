import numpy as np
import pytest

from relground.shapeworld import (
    DATASET_FORMAT,
    DEFAULT_COLORS,
    DatasetFormatError,
    Description,
    GenerationError,
    RegionRecord,
    Scene,
    ShapeInstance,
    ShapeWorldConfig,
    cell_spatial,
    generate_dataset,
    generate_scene,
    generate_split_dataset,
    load_dataset,
    load_region_features,
    pair_spatial_matrix,
    raster_patch,
    realize_tokens,
    region_features,
    render_scene_grid,
    save_dataset,
    save_region_features,
    scene_features,
    spatial_feature,
    split_dataset,
    split_role,
    template_vocabulary,
    visual_feature,
)

import oracles


def test_generation_is_deterministic(tiny_config, tiny_dataset):
    again = generate_dataset(tiny_config)
    for a, b in zip(tiny_dataset.scenes, again.scenes):
        assert a.scene == b.scene
        assert a.expressions == b.expressions


def test_scene_index_seeds_are_independent():
    cfg = ShapeWorldConfig(grid_size=4, min_shapes=5, max_shapes=8, seed=9, retry_budget=5000)
    a = generate_scene(cfg, 3)
    b = generate_scene(cfg, 4)
    assert a.scene.scene_id == "scene-000003"
    assert b.scene.scene_id == "scene-000004"
    assert a.scene.cells != b.scene.cells


def test_candidates_cover_the_whole_grid():
    cfg = ShapeWorldConfig(min_shapes=6, max_shapes=10, retry_budget=5000)
    record = generate_scene(cfg, 0)
    cells = record.scene.candidate_cells()
    assert len(cells) == 25
    assert cells[0] == (0, 0)
    assert cells[-1] == (4, 4)
    assert cells == sorted(cells)
    feats = scene_features(record.scene)
    assert feats.matrix.shape == (25, len(visual_feature(None)) + 5)


def test_expressions_ground_to_the_unique_matching_pair(tiny_dataset):
    """The independent token-level evaluator agrees with the stored cells."""
    for record in tiny_dataset.scenes:
        for expr in record.expressions:
            pairs = oracles.matching_pairs(record.scene, expr.tokens)
            assert pairs == [(expr.subject_cell, expr.object_cell)]


def test_subject_description_is_ambiguous(tiny_dataset):
    # at least two cells must match the subject description alone
    for record in tiny_dataset.scenes:
        for expr in record.expressions:
            (shape, color, size), _, _ = oracles.parse_expression_tokens(expr.tokens)
            assert len(oracles.matching_cells(record.scene, shape, color, size)) >= 2


def test_expressions_within_scene_are_distinct(tiny_dataset):
    for record in tiny_dataset.scenes:
        tokens = [e.tokens for e in record.expressions]
        assert len(set(tokens)) == len(tokens)


def test_relation_semantics_match_oracle_at_scale():
    cfg = ShapeWorldConfig(
        n_scenes=40, grid_size=4, seed=77, min_shapes=5, max_shapes=9, retry_budget=5000
    )
    checked = 0
    for record in generate_dataset(cfg).scenes:
        for expr in record.expressions:
            _, rel, _ = oracles.parse_expression_tokens(expr.tokens)
            assert oracles.relation_holds(expr.subject_cell, expr.object_cell, rel)
            checked += 1
    assert checked == 80


def test_generation_error_when_impossible():
    # a 1-cell grid can never host a two-object relation
    cfg = ShapeWorldConfig(grid_size=1, min_shapes=1, max_shapes=1, retry_budget=3)
    with pytest.raises(GenerationError, match="scene-000000"):
        generate_scene(cfg, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        ShapeWorldConfig(min_shapes=0)
    with pytest.raises(ValueError):
        ShapeWorldConfig(min_shapes=9, max_shapes=8)
    with pytest.raises(ValueError):
        ShapeWorldConfig(grid_size=2, max_shapes=5)
    with pytest.raises(ValueError):
        ShapeWorldConfig(feature_mode="photograph")
    with pytest.raises(ValueError):
        ShapeWorldConfig(colors=())


def test_realize_tokens_example():
    subject = Description(shape="square", color="green")
    obj = Description(shape="circle", color="red")
    tokens = realize_tokens(subject, "right of", obj)
    assert tokens == ["the", "green", "square", "right", "of", "a", "red", "circle"]
    with pytest.raises(ValueError):
        realize_tokens(subject, "besides", obj)


def test_template_vocabulary_contents():
    vocab = template_vocabulary()
    assert vocab == sorted(vocab)
    for word in ("the", "a", "small", "large", "left", "of", "above", "below",
                 "circle", "square", "triangle", *DEFAULT_COLORS):
        assert word in vocab


def test_spatial_feature_values():
    corner = cell_spatial(0, 0, 5)
    assert np.allclose(corner, [0.0, 0.0, 0.2, 0.2, 0.04], atol=1e-15)
    whole = spatial_feature(0.0, 0.0, 1.0, 1.0)
    assert np.allclose(whole, [0.0, 0.0, 1.0, 1.0, 1.0], atol=1e-15)
    scaled = spatial_feature(16.0, 8.0, 48.0, 24.0, image_w=64.0, image_h=32.0)
    assert np.allclose(scaled, [0.25, 0.25, 0.75, 0.75, 0.25], atol=1e-15)


def test_cell_spatial_uses_column_as_x():
    # row 1, col 3 on a 4-grid: x from the column, y from the row
    got = cell_spatial(1, 3, 4)
    assert np.allclose(got, [0.75, 0.25, 1.0, 0.5, 0.0625])


def test_visual_feature_onehot_blocks():
    inst = ShapeInstance(shape="square", color="blue", size="large")
    got = visual_feature(inst)
    assert got.shape == (3 + 6 + 2,)
    assert got.sum() == 3.0
    assert got[1] == 1.0  # shape block
    assert got[3 + 2] == 1.0  # color block
    assert got[3 + 6 + 1] == 1.0  # size block
    assert np.array_equal(visual_feature(None), np.zeros(11))


def test_empty_cells_have_zero_visual_nonzero_spatial(tiny_dataset):
    record = tiny_dataset.scenes[0]
    empties = [c for c in record.scene.candidate_cells() if c not in record.scene.cells]
    assert empties
    rf = region_features(record.scene, empties[0])
    assert np.array_equal(rf.visual, np.zeros_like(rf.visual))
    assert rf.spatial[4] > 0


def test_raster_patch_properties():
    large = ShapeInstance(shape="circle", color="cyan", size="large")
    small = ShapeInstance(shape="circle", color="cyan", size="small")
    a = raster_patch(large, patch_size=8)
    b = raster_patch(large, patch_size=8)
    assert np.array_equal(a, b)
    assert a.shape == (64,)
    assert (a > 0).sum() > (raster_patch(small, patch_size=8) > 0).sum()
    assert np.array_equal(raster_patch(None), np.zeros(64))
    shapes = {
        s: raster_patch(ShapeInstance(s, "red", "large"), patch_size=10)
        for s in ("circle", "square", "triangle")
    }
    assert len({arr.tobytes() for arr in shapes.values()}) == 3
    # intensity encodes the color index
    assert set(np.unique(shapes["square"])) == {0.0, 1 / 6}


def test_raster_feature_mode_changes_width(tiny_dataset):
    record = tiny_dataset.scenes[0]
    sym = scene_features(record.scene, feature_mode="symbolic")
    ras = scene_features(record.scene, feature_mode="raster", patch_size=6)
    assert ras.matrix.shape == (sym.n_candidates, 36 + 5)
    assert sym.matrix.shape[1] == 11 + 5


def test_pair_spatial_matrix_layout():
    mat = pair_spatial_matrix(3)
    assert mat.shape == (81, 10)
    # entry i*9+j is [spatial_i, spatial_j]
    i, j = 2, 7
    cells = [(r, c) for r in range(3) for c in range(3)]
    expected = np.concatenate([cell_spatial(*cells[i], 3), cell_spatial(*cells[j], 3)])
    assert np.allclose(mat[i * 9 + j], expected)
    assert pair_spatial_matrix(3) is mat  # cached per grid size


def test_dataset_roundtrip(tmp_path, tiny_dataset):
    path = tmp_path / "data.jsonl"
    save_dataset(tiny_dataset, path)
    loaded = load_dataset(path)
    assert loaded.config == tiny_dataset.config
    assert len(loaded) == len(tiny_dataset)
    for a, b in zip(loaded.scenes, tiny_dataset.scenes):
        assert a.scene == b.scene
        assert a.expressions == b.expressions


def test_dataset_header_is_labeled(tmp_path, tiny_dataset):
    path = tmp_path / "data.jsonl"
    save_dataset(tiny_dataset, path)
    first = path.read_text().splitlines()[0]
    assert DATASET_FORMAT in first


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"format":"something-else"}\n')
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(path)
    path.write_text("")
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(path)


def test_load_reports_bad_record_line(tmp_path, tiny_dataset):
    path = tmp_path / "data.jsonl"
    save_dataset(tiny_dataset, path)
    lines = path.read_text().splitlines()
    lines[3] = lines[3][: len(lines[3]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 4"):
        load_dataset(path)


def test_load_rejects_duplicate_cells(tmp_path):
    header = '{"format":"%s","config":{}}' % DATASET_FORMAT
    record = (
        '{"scene_id":"s","grid_size":2,"objects":['
        '{"row":0,"col":0,"shape":"circle","color":"red","size":"small"},'
        '{"row":0,"col":0,"shape":"square","color":"red","size":"small"}],'
        '"expressions":[]}'
    )
    path = tmp_path / "dup.jsonl"
    path.write_text(header + "\n" + record + "\n")
    with pytest.raises(DatasetFormatError, match="line 2"):
        load_dataset(path)


def test_split_role_is_stable_and_splits_disjointly(tiny_dataset):
    assert split_role("scene-000000") in ("train", "test")
    assert split_role("scene-000000") == split_role("scene-000000")
    train, test = split_dataset(tiny_dataset, test_fraction=0.3)
    assert len(train) + len(test) == len(tiny_dataset)
    train_ids = {r.scene.scene_id for r in train}
    test_ids = {r.scene.scene_id for r in test}
    assert not train_ids & test_ids


def test_split_fraction_roughly_respected():
    ids = [f"scene-{i:06d}" for i in range(4000)]
    frac = sum(split_role(i, 0.1) == "test" for i in ids) / len(ids)
    assert 0.06 < frac < 0.14


def test_generate_split_dataset_fills_quotas():
    cfg = ShapeWorldConfig(grid_size=4, seed=3, min_shapes=5, max_shapes=8, retry_budget=5000)
    train, test = generate_split_dataset(cfg, n_train=8, n_test=3, test_fraction=0.25)
    assert len(train) == 8
    assert len(test) == 3
    train_ids = {r.scene.scene_id for r in train.scenes}
    test_ids = {r.scene.scene_id for r in test.scenes}
    assert not train_ids & test_ids
    for rec in test.scenes:
        assert split_role(rec.scene.scene_id, 0.25) == "test"


def test_region_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    regions = [
        RegionRecord("r0", (0.0, 0.0, 0.5, 0.5), rng.normal(size=7)),
        RegionRecord("r1", (0.25, 0.25, 1.0, 1.0), rng.normal(size=7)),
    ]
    path = tmp_path / "regions.bin"
    save_region_features(path, regions)
    loaded = load_region_features(path)
    assert len(loaded) == 2
    for a, b in zip(loaded, regions):
        assert a.region_id == b.region_id
        assert a.box == pytest.approx(b.box)
        assert np.array_equal(a.features, b.features)


def test_region_file_rejects_corruption(tmp_path):
    path = tmp_path / "regions.bin"
    save_region_features(path, [RegionRecord("r0", (0, 0, 1, 1), np.ones(4))])
    raw = path.read_bytes()

    bad_magic = tmp_path / "bad_magic.bin"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetFormatError):
        load_region_features(bad_magic)

    truncated = tmp_path / "truncated.bin"
    truncated.write_bytes(raw[:-5])
    with pytest.raises(DatasetFormatError):
        load_region_features(truncated)

    trailing = tmp_path / "trailing.bin"
    trailing.write_bytes(raw + b"\x00")
    with pytest.raises(DatasetFormatError):
        load_region_features(trailing)


def test_render_scene_grid_marks():
    cells = {
        (0, 0): ShapeInstance("circle", "red", "small"),
        (1, 2): ShapeInstance("square", "blue", "large"),
    }
    scene = Scene("s", 3, cells)
    text = render_scene_grid(scene, marks={(0, 0): "*"})
    lines = text.splitlines()
    assert len(lines) == 3
    assert "*" in lines[0]
    assert ".." in text
