"""Relational grounding of templated referring expressions on grid scenes.

The package pairs a from-scratch reverse-mode autodiff engine with a
compositional grounding model: expressions parse into subject, relation and
object vectors via attention over a bidirectional LSTM, candidates are
scored individually and in ordered pairs, and training works with or
without object-side annotations.
"""

from .autodiff import NumericFault, Tensor, backward, no_grad
from .checkpoint import (
    Checkpoint,
    CheckpointFormatError,
    load_checkpoint,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)
from .evaluation import EvalReport, evaluate, evaluate_baseline_pair, inspect_expression
from .experiments import ExperimentSpec, run_experiment
from .gradcheck import check_gradients, run_micro_gradcheck
from .language import ParsedExpression, UnknownTokenError, Vocabulary, parse_expression
from .model import BaselineLocModel, CmnModel, ModelConfig, prepare_dataset, prepare_scene
from .optim import SgdMomentum, xavier_init
from .scoring import ScoreTable, loc_score, pair_score, rel_score, score_table
from .shapeworld import (
    Dataset,
    DatasetFormatError,
    GenerationError,
    GroundedExpression,
    Scene,
    SceneRecord,
    ShapeInstance,
    ShapeWorldConfig,
    generate_dataset,
    generate_split_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .training import TrainConfig, TrainingFault, loss_strong, loss_weak, scene_loss, train

__version__ = "0.1.0"
