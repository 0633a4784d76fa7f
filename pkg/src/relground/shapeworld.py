"""Synthetic grid scenes with templated relational referring expressions.

A scene is a small square grid where each cell holds at most one colored
shape. Every scene carries expressions of the form "<subject> <relation>
<object>", for example "the green square right of a red circle". Generation
rejection-samples scene layouts until two guarantees hold for every emitted
expression:

* ambiguity: at least two cells match the subject description alone, so the
  subject cannot be found without reading the relation, and
* uniqueness: exactly one (subject, object) cell pair satisfies the whole
  expression, so the ground truth is well defined.

Datasets serialize to line-delimited JSON records behind a header line whose
``format`` field is ``shapeworld-v1``. Region features for external corpora
can be imported from a little-endian binary format with magic ``CMNF``.
"""

from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import struct
from typing import Iterable

import numpy as np

__all__ = [
    "SHAPES",
    "SIZES",
    "ARTICLES",
    "DEFAULT_COLORS",
    "RELATIONS",
    "RELATION_TOKENS",
    "DATASET_FORMAT",
    "GenerationError",
    "DatasetFormatError",
    "ShapeWorldConfig",
    "ShapeInstance",
    "Scene",
    "Description",
    "GroundedExpression",
    "SceneRecord",
    "Dataset",
    "RegionFeatures",
    "RegionRecord",
    "realize_tokens",
    "template_vocabulary",
    "generate_scene",
    "generate_dataset",
    "generate_split_dataset",
    "split_role",
    "split_dataset",
    "save_dataset",
    "load_dataset",
    "spatial_feature",
    "cell_box",
    "cell_spatial",
    "visual_feature",
    "raster_patch",
    "region_features",
    "SceneFeatures",
    "scene_features",
    "pair_spatial_matrix",
    "save_region_features",
    "load_region_features",
    "render_scene_grid",
]

SHAPES = ("circle", "square", "triangle")
SIZES = ("small", "large")
ARTICLES = ("the", "a")
DEFAULT_COLORS = ("red", "green", "blue", "yellow", "magenta", "cyan")
DATASET_FORMAT = "shapeworld-v1"
REGION_FILE_MAGIC = b"CMNF"

# A relation holds between grid cells (row, col); row 0 is the top row.
# left/right compare columns within one row, above/below compare rows within
# one column, at any distance.
RELATIONS = {
    "left of": lambda a, b: a[0] == b[0] and a[1] < b[1],
    "right of": lambda a, b: a[0] == b[0] and a[1] > b[1],
    "above": lambda a, b: a[1] == b[1] and a[0] < b[0],
    "below": lambda a, b: a[1] == b[1] and a[0] > b[0],
}
RELATION_TOKENS = {
    "left of": ("left", "of"),
    "right of": ("right", "of"),
    "above": ("above",),
    "below": ("below",),
}

_EXPRESSION_TRIES = 200


class GenerationError(RuntimeError):
    """Scene generation exhausted its retry budget."""


class DatasetFormatError(ValueError):
    """A dataset or region-feature file failed to parse."""


@dataclasses.dataclass(frozen=True)
class ShapeWorldConfig:
    """Knobs for scene generation and feature extraction."""

    n_scenes: int = 100
    grid_size: int = 5
    seed: int = 0
    expressions_per_scene: int = 2
    min_shapes: int = 6
    max_shapes: int = 12
    colors: tuple[str, ...] = DEFAULT_COLORS
    retry_budget: int = 1000
    feature_mode: str = "symbolic"
    patch_size: int = 8

    def __post_init__(self):
        object.__setattr__(self, "colors", tuple(self.colors))
        if self.grid_size < 1:
            raise ValueError(f"grid_size must be at least 1, got {self.grid_size}")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError(f"need 1 <= min_shapes <= max_shapes, got {self.min_shapes}..{self.max_shapes}")
        if self.max_shapes > self.grid_size**2:
            raise ValueError(f"max_shapes {self.max_shapes} exceeds cell count {self.grid_size ** 2}")
        if self.expressions_per_scene < 1:
            raise ValueError("expressions_per_scene must be at least 1")
        if not self.colors:
            raise ValueError("colors must be non-empty")
        if self.feature_mode not in ("symbolic", "raster"):
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")
        if self.patch_size < 2:
            raise ValueError("patch_size must be at least 2")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["colors"] = list(self.colors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeWorldConfig":
        d = dict(d)
        if "colors" in d:
            d["colors"] = tuple(d["colors"])
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class ShapeInstance:
    shape: str
    color: str
    size: str


@dataclasses.dataclass(frozen=True)
class Scene:
    """One grid layout; ``cells`` maps occupied (row, col) to a shape."""

    scene_id: str
    grid_size: int
    cells: dict[tuple[int, int], ShapeInstance]

    def candidate_cells(self) -> list[tuple[int, int]]:
        """All grid cells in row-major order, occupied or not."""
        g = self.grid_size
        return [(r, c) for r in range(g) for c in range(g)]

    def cell_index(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.grid_size + cell[1]


@dataclasses.dataclass(frozen=True)
class Description:
    """Attribute subset naming a shape: class plus optional color and size."""

    shape: str
    color: str | None = None
    size: str | None = None

    def matches(self, instance: ShapeInstance) -> bool:
        if instance.shape != self.shape:
            return False
        if self.color is not None and instance.color != self.color:
            return False
        if self.size is not None and instance.size != self.size:
            return False
        return True

    def tokens(self, article: str) -> list[str]:
        words = [article]
        if self.size is not None:
            words.append(self.size)
        if self.color is not None:
            words.append(self.color)
        words.append(self.shape)
        return words


@dataclasses.dataclass(frozen=True)
class GroundedExpression:
    """A tokenized expression with its ground-truth cells.

    ``template_parts`` records the subject/relation/object substrings used at
    generation time. They exist for attention-alignment diagnostics only and
    are never model input.
    """

    tokens: tuple[str, ...]
    subject_cell: tuple[int, int]
    object_cell: tuple[int, int]
    template_parts: dict[str, str]


@dataclasses.dataclass
class SceneRecord:
    scene: Scene
    expressions: list[GroundedExpression]


@dataclasses.dataclass
class Dataset:
    config: ShapeWorldConfig
    scenes: list[SceneRecord]

    def __len__(self) -> int:
        return len(self.scenes)


def realize_tokens(
    subject: Description,
    relation: str,
    obj: Description,
    subject_article: str = "the",
    object_article: str = "a",
) -> list[str]:
    """Render an expression template as a flat token list."""
    if relation not in RELATION_TOKENS:
        raise ValueError(f"unknown relation {relation!r}")
    return (
        subject.tokens(subject_article)
        + list(RELATION_TOKENS[relation])
        + obj.tokens(object_article)
    )


def template_vocabulary(colors: Iterable[str] = DEFAULT_COLORS) -> list[str]:
    """Every word the expression templates can emit, sorted."""
    words = set(ARTICLES) | set(SIZES) | set(SHAPES) | set(colors)
    for toks in RELATION_TOKENS.values():
        words.update(toks)
    return sorted(words)


def _matching_cells(scene: Scene, desc: Description) -> list[tuple[int, int]]:
    return [cell for cell, inst in sorted(scene.cells.items()) if desc.matches(inst)]


def _matching_pairs(
    scene: Scene, subject: Description, relation: str, obj: Description
) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    pred = RELATIONS[relation]
    subj_cells = _matching_cells(scene, subject)
    obj_cells = _matching_cells(scene, obj)
    return [(a, b) for a in subj_cells for b in obj_cells if a != b and pred(a, b)]


def _random_description(inst: ShapeInstance, rng: np.random.Generator) -> Description:
    color = inst.color if rng.random() < 0.5 else None
    size = inst.size if rng.random() < 0.5 else None
    return Description(shape=inst.shape, color=color, size=size)


def _sample_layout(config: ShapeWorldConfig, rng: np.random.Generator) -> dict[tuple[int, int], ShapeInstance]:
    g = config.grid_size
    count = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    flat = rng.choice(g * g, size=count, replace=False)
    cells = {}
    for f in flat:
        cell = (int(f) // g, int(f) % g)
        cells[cell] = ShapeInstance(
            shape=SHAPES[rng.integers(len(SHAPES))],
            color=config.colors[rng.integers(len(config.colors))],
            size=SIZES[rng.integers(len(SIZES))],
        )
    return cells


def _sample_expression(
    scene: Scene, rng: np.random.Generator, taken: set[tuple[str, ...]]
) -> GroundedExpression | None:
    occupied = sorted(scene.cells)
    if len(occupied) < 2:
        return None
    rel_names = list(RELATIONS)
    for _ in range(_EXPRESSION_TRIES):
        i = occupied[rng.integers(len(occupied))]
        j = occupied[rng.integers(len(occupied))]
        if i == j:
            continue
        holding = [name for name in rel_names if RELATIONS[name](i, j)]
        if not holding:
            continue
        relation = holding[rng.integers(len(holding))]
        subject = _random_description(scene.cells[i], rng)
        obj = _random_description(scene.cells[j], rng)
        if len(_matching_cells(scene, subject)) < 2:
            continue
        if _matching_pairs(scene, subject, relation, obj) != [(i, j)]:
            continue
        subj_article = ARTICLES[rng.integers(len(ARTICLES))]
        obj_article = ARTICLES[rng.integers(len(ARTICLES))]
        tokens = tuple(realize_tokens(subject, relation, obj, subj_article, obj_article))
        if tokens in taken:
            continue
        parts = {
            "subject": " ".join(subject.tokens(subj_article)),
            "relation": relation,
            "object": " ".join(obj.tokens(obj_article)),
        }
        return GroundedExpression(tokens, i, j, parts)
    return None


def generate_scene(config: ShapeWorldConfig, index: int) -> SceneRecord:
    """Generate one scene, rejection-sampling layouts until every expression
    satisfies the ambiguity and uniqueness guarantees."""
    rng = np.random.default_rng([config.seed, index])
    scene_id = f"scene-{index:06d}"
    for _ in range(config.retry_budget):
        cells = _sample_layout(config, rng)
        scene = Scene(scene_id, config.grid_size, cells)
        taken: set[tuple[str, ...]] = set()
        expressions = []
        for _ in range(config.expressions_per_scene):
            expr = _sample_expression(scene, rng, taken)
            if expr is None:
                break
            taken.add(expr.tokens)
            expressions.append(expr)
        if len(expressions) == config.expressions_per_scene:
            return SceneRecord(scene, expressions)
    raise GenerationError(
        f"scene {scene_id}: no layout satisfied the ambiguity (>=2 subject matches) and "
        f"uniqueness (exactly one matching pair) constraints within {config.retry_budget} attempts"
    )


def generate_dataset(config: ShapeWorldConfig) -> Dataset:
    """Generate ``config.n_scenes`` scenes with per-scene derived seeds."""
    scenes = [generate_scene(config, i) for i in range(config.n_scenes)]
    return Dataset(config, scenes)


def split_role(scene_id: str, test_fraction: float = 0.1) -> str:
    """Stable train/test assignment from a hash of the scene id."""
    digest = hashlib.sha1(scene_id.encode("utf-8")).digest()
    value = int.from_bytes(digest[:8], "big") / 2**64
    return "test" if value < test_fraction else "train"


def split_dataset(dataset: Dataset, test_fraction: float = 0.1) -> tuple[list[SceneRecord], list[SceneRecord]]:
    train = [r for r in dataset.scenes if split_role(r.scene.scene_id, test_fraction) == "train"]
    test = [r for r in dataset.scenes if split_role(r.scene.scene_id, test_fraction) == "test"]
    return train, test


def generate_split_dataset(
    config: ShapeWorldConfig,
    n_train: int,
    n_test: int,
    test_fraction: float = 0.1,
) -> tuple[Dataset, Dataset]:
    """Generate scenes until the hash-assigned train and test buckets hold
    exactly the requested counts; overflow scenes are discarded."""
    train: list[SceneRecord] = []
    test: list[SceneRecord] = []
    index = 0
    cap = 200 * (n_train + n_test) + 1000
    while len(train) < n_train or len(test) < n_test:
        if index >= cap:
            raise GenerationError(
                f"could not fill split quotas train={n_train} test={n_test} within {cap} scenes"
            )
        record = generate_scene(config, index)
        role = split_role(record.scene.scene_id, test_fraction)
        if role == "train" and len(train) < n_train:
            train.append(record)
        elif role == "test" and len(test) < n_test:
            test.append(record)
        index += 1
    return Dataset(config, train), Dataset(config, test)


def _scene_to_json(record: SceneRecord) -> dict:
    objects = [
        {"row": r, "col": c, "shape": inst.shape, "color": inst.color, "size": inst.size}
        for (r, c), inst in sorted(record.scene.cells.items())
    ]
    expressions = [
        {
            "tokens": list(e.tokens),
            "subject_cell": list(e.subject_cell),
            "object_cell": list(e.object_cell),
            "template_parts": e.template_parts,
        }
        for e in record.expressions
    ]
    return {
        "scene_id": record.scene.scene_id,
        "grid_size": record.scene.grid_size,
        "objects": objects,
        "expressions": expressions,
    }


def _scene_from_json(obj: dict) -> SceneRecord:
    grid = int(obj["grid_size"])
    cells = {}
    for entry in obj["objects"]:
        cell = (int(entry["row"]), int(entry["col"]))
        if not (0 <= cell[0] < grid and 0 <= cell[1] < grid):
            raise ValueError(f"cell {cell} outside {grid}x{grid} grid")
        if cell in cells:
            raise ValueError(f"duplicate object in cell {cell}")
        cells[cell] = ShapeInstance(entry["shape"], entry["color"], entry["size"])
    scene = Scene(str(obj["scene_id"]), grid, cells)
    expressions = []
    for entry in obj["expressions"]:
        subject_cell = tuple(int(v) for v in entry["subject_cell"])
        object_cell_raw = entry.get("object_cell")
        object_cell = tuple(int(v) for v in object_cell_raw) if object_cell_raw is not None else None
        expressions.append(
            GroundedExpression(
                tokens=tuple(entry["tokens"]),
                subject_cell=subject_cell,
                object_cell=object_cell,
                template_parts=dict(entry.get("template_parts", {})),
            )
        )
    return SceneRecord(scene, expressions)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the header line followed by one JSON record per scene."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": DATASET_FORMAT, "config": dataset.config.to_dict()}
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for record in dataset.scenes:
            fh.write(json.dumps(_scene_to_json(record), sort_keys=True, separators=(",", ":")) + "\n")


def load_dataset(path) -> Dataset:
    """Parse a dataset file, reporting the line number of any bad record."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: invalid header JSON ({exc.msg})") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"line 1: expected format {DATASET_FORMAT!r} header")
    try:
        config = ShapeWorldConfig.from_dict(header.get("config", {}))
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line 1: bad config ({exc})") from exc
    scenes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            scenes.append(_scene_from_json(obj))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            detail = getattr(exc, "msg", None) or str(exc)
            raise DatasetFormatError(f"line {lineno}: malformed scene record ({detail})") from exc
    return Dataset(config, scenes)


def spatial_feature(
    xmin: float, ymin: float, xmax: float, ymax: float, image_w: float = 1.0, image_h: float = 1.0
) -> np.ndarray:
    """Normalized box descriptor [xmin/W, ymin/H, xmax/W, ymax/H, area ratio]."""
    a = (xmin / image_w, ymin / image_h, xmax / image_w, ymax / image_h)
    area = (a[2] - a[0]) * (a[3] - a[1])
    return np.array([a[0], a[1], a[2], a[3], area], dtype=np.float64)


def cell_box(row: int, col: int, grid_size: int) -> tuple[float, float, float, float]:
    g = grid_size
    return (col / g, row / g, (col + 1) / g, (row + 1) / g)


def cell_spatial(row: int, col: int, grid_size: int) -> np.ndarray:
    return spatial_feature(*cell_box(row, col, grid_size))


def visual_feature(instance: ShapeInstance | None, colors: tuple[str, ...] = DEFAULT_COLORS) -> np.ndarray:
    """One-hot shape, color and size blocks; an empty cell is all zeros."""
    out = np.zeros(len(SHAPES) + len(colors) + len(SIZES), dtype=np.float64)
    if instance is None:
        return out
    out[SHAPES.index(instance.shape)] = 1.0
    out[len(SHAPES) + colors.index(instance.color)] = 1.0
    out[len(SHAPES) + len(colors) + SIZES.index(instance.size)] = 1.0
    return out


def raster_patch(
    instance: ShapeInstance | None,
    patch_size: int = 8,
    colors: tuple[str, ...] = DEFAULT_COLORS,
) -> np.ndarray:
    """Flattened grayscale crop of the cell; a harder stand-in for one-hots.

    Color maps to intensity, size to extent, and the shape to its silhouette
    drawn over pixel centers. Empty cells are all-zero patches.
    """
    p = patch_size
    if instance is None:
        return np.zeros(p * p, dtype=np.float64)
    intensity = (colors.index(instance.color) + 1) / len(colors)
    radius = 0.44 if instance.size == "large" else 0.30
    coords = (np.arange(p) + 0.5) / p
    xs, ys = np.meshgrid(coords, coords)
    dx, dy = xs - 0.5, ys - 0.5
    if instance.shape == "circle":
        mask = dx * dx + dy * dy <= radius * radius
    elif instance.shape == "square":
        mask = np.maximum(np.abs(dx), np.abs(dy)) <= radius
    else:  # triangle: apex at the top, base at the bottom
        progress = (dy + radius) / (2 * radius)
        mask = (np.abs(dy) <= radius) & (np.abs(dx) <= radius * np.clip(progress, 0.0, 1.0))
    return (mask.astype(np.float64) * intensity).reshape(-1)


@dataclasses.dataclass(frozen=True)
class RegionFeatures:
    """Per-candidate model input: a visual vector and the 5-d spatial vector."""

    visual: np.ndarray
    spatial: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return np.concatenate([self.visual, self.spatial])


def region_features(
    scene: Scene,
    cell: tuple[int, int],
    colors: tuple[str, ...] = DEFAULT_COLORS,
    feature_mode: str = "symbolic",
    patch_size: int = 8,
) -> RegionFeatures:
    instance = scene.cells.get(cell)
    if feature_mode == "symbolic":
        visual = visual_feature(instance, colors)
    elif feature_mode == "raster":
        visual = raster_patch(instance, patch_size, colors)
    else:
        raise ValueError(f"unknown feature_mode {feature_mode!r}")
    return RegionFeatures(visual, cell_spatial(cell[0], cell[1], scene.grid_size))


@functools.lru_cache(maxsize=8)
def _spatial_grid(grid_size: int) -> np.ndarray:
    cells = [(r, c) for r in range(grid_size) for c in range(grid_size)]
    return np.stack([cell_spatial(r, c, grid_size) for r, c in cells])


@functools.lru_cache(maxsize=8)
def pair_spatial_matrix(grid_size: int) -> np.ndarray:
    """Spatial input for every ordered candidate pair, row-major (i * N + j).

    Depends only on the grid geometry, so one matrix per grid size is shared
    across all scenes.
    """
    spatial = _spatial_grid(grid_size)
    n = spatial.shape[0]
    left = np.repeat(spatial, n, axis=0)
    right = np.tile(spatial, (n, 1))
    return np.concatenate([left, right], axis=1)


@dataclasses.dataclass
class SceneFeatures:
    """Candidate-order feature matrices for one scene.

    ``matrix`` stacks [visual; spatial] per candidate cell in row-major cell
    order; ``pair_matrix`` is the shared spatial matrix for ordered pairs.
    """

    cells: list[tuple[int, int]]
    matrix: np.ndarray
    spatial: np.ndarray
    pair_matrix: np.ndarray

    @property
    def n_candidates(self) -> int:
        return len(self.cells)


def scene_features(
    scene: Scene,
    colors: tuple[str, ...] = DEFAULT_COLORS,
    feature_mode: str = "symbolic",
    patch_size: int = 8,
) -> SceneFeatures:
    cells = scene.candidate_cells()
    rows = []
    for cell in cells:
        rf = region_features(scene, cell, colors, feature_mode, patch_size)
        rows.append(rf.combined)
    spatial = _spatial_grid(scene.grid_size)
    return SceneFeatures(cells, np.stack(rows), spatial, pair_spatial_matrix(scene.grid_size))


@dataclasses.dataclass(frozen=True)
class RegionRecord:
    region_id: str
    box: tuple[float, float, float, float]
    features: np.ndarray


def save_region_features(path, regions: list[RegionRecord]) -> None:
    """Write regions to the binary import format (magic ``CMNF``)."""
    with open(path, "wb") as fh:
        fh.write(REGION_FILE_MAGIC)
        fh.write(struct.pack("<I", len(regions)))
        for reg in regions:
            ident = reg.region_id.encode("utf-8")
            feats = np.asarray(reg.features, dtype=np.float64)
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<4d", *reg.box))
            fh.write(struct.pack("<I", feats.size))
            fh.write(feats.astype("<f8").tobytes())


def load_region_features(path) -> list[RegionRecord]:
    """Read a ``CMNF`` region-feature file, rejecting malformed input."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != REGION_FILE_MAGIC:
        raise DatasetFormatError(f"bad region file magic {blob[:4]!r}, expected {REGION_FILE_MAGIC!r}")
    offset = 4

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise DatasetFormatError(f"truncated region file while reading {what} at byte {offset}")
        piece = blob[offset : offset + n]
        offset += n
        return piece

    (count,) = struct.unpack("<I", take(4, "region count"))
    regions = []
    for k in range(count):
        (id_len,) = struct.unpack("<I", take(4, f"region {k} id length"))
        ident = take(id_len, f"region {k} id").decode("utf-8")
        box = struct.unpack("<4d", take(32, f"region {k} box"))
        (feat_len,) = struct.unpack("<I", take(4, f"region {k} feature length"))
        feats = np.frombuffer(take(8 * feat_len, f"region {k} features"), dtype="<f8").copy()
        regions.append(RegionRecord(ident, box, feats))
    if offset != len(blob):
        raise DatasetFormatError(f"{len(blob) - offset} trailing bytes after region records")
    return regions


_SHAPE_GLYPH = {"circle": "c", "square": "s", "triangle": "t"}


def render_scene_grid(scene: Scene, marks: dict[tuple[int, int], str] | None = None) -> str:
    """ASCII rendering: shape initial + color initial per cell, '..' if empty.

    ``marks`` may append a one-character tag to chosen cells, for example
    ``{(1, 2): "*"}`` to flag a predicted subject.
    """
    marks = marks or {}
    lines = []
    for r in range(scene.grid_size):
        row_cells = []
        for c in range(scene.grid_size):
            inst = scene.cells.get((r, c))
            base = _SHAPE_GLYPH[inst.shape] + inst.color[0].upper() if inst else ".."
            row_cells.append(base + marks.get((r, c), " "))
        lines.append(" ".join(row_cells))
    return "\n".join(lines)
