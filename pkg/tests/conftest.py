import pytest

from relground.language import Vocabulary
from relground.model import prepare_dataset
from relground.shapeworld import ShapeWorldConfig, generate_dataset, template_vocabulary


@pytest.fixture(scope="session")
def tiny_config():
    return ShapeWorldConfig(
        n_scenes=12,
        grid_size=3,
        seed=5,
        expressions_per_scene=2,
        min_shapes=4,
        max_shapes=6,
        retry_budget=5000,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    return generate_dataset(tiny_config)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_config):
    return Vocabulary(template_vocabulary(tiny_config.colors))


@pytest.fixture(scope="session")
def tiny_scenes(tiny_dataset, tiny_vocab):
    return prepare_dataset(tiny_dataset, tiny_vocab)
