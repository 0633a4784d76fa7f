"""Finite-difference gradient verification.

The checker evaluates the loss with each parameter entry nudged up and down
(central differences) and compares against the gradients the tape produced.
Finite differencing only ever runs forward passes with gradient tracking
disabled, so the two estimates come from genuinely separate code paths.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .language import Vocabulary
from .model import prepare_scene
from .shapeworld import ShapeWorldConfig, generate_scene, template_vocabulary
from .training import TrainConfig, build_model, loss_strong, loss_weak

__all__ = [
    "relative_error",
    "finite_difference_grad",
    "GradCheckReport",
    "check_gradients",
    "micro_loss",
    "micro_problem",
    "run_micro_gradcheck",
]


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_difference_grad(loss_fn, param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn()`` w.r.t. one parameter."""
    grad = np.zeros_like(param.values)
    flat = param.values.reshape(-1)
    out = grad.reshape(-1)
    with ad.no_grad():
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + step
            upper = loss_fn()
            flat[k] = original - step
            lower = loss_fn()
            flat[k] = original
            out[k] = (upper - lower) / (2.0 * step)
    return grad


@dataclasses.dataclass
class GradCheckReport:
    max_error: float
    per_param: dict[str, float]
    n_entries: int

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_error <= tolerance


def check_gradients(
    loss_builder,
    params: dict[str, Tensor],
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients with finite differences for every parameter.

    ``loss_builder`` must rebuild the forward computation from the current
    parameter values and return the scalar loss tensor; it is called once
    under tracking to populate gradients and many times under ``no_grad``
    for the finite differences.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_builder()
    ad.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def loss_value() -> float:
        return loss_builder().item()

    worst = 0.0
    per_param: dict[str, float] = {}
    entries = 0
    for name, p in params.items():
        numeric = finite_difference_grad(loss_value, p, step)
        errs = np.abs(analytic[name] - numeric) / np.maximum(
            np.maximum(np.abs(analytic[name]), np.abs(numeric)), 1e-8
        )
        per_param[name] = float(errs.max()) if errs.size else 0.0
        worst = max(worst, per_param[name])
        entries += errs.size
    return GradCheckReport(max_error=worst, per_param=per_param, n_entries=entries)


def micro_loss(model, scene) -> Tensor:
    """Check objective: weak loss on expression 0, strong loss on expression
    1, plus a small linear probe of the first pair table.

    The mix is deliberate. Both training losses are softmax-based and hence
    exactly shift-invariant in the scalar score biases, whose true-zero
    gradients sit below what central differences can resolve; the linear
    probe gives every parameter a well-conditioned gradient. Keeping the
    weak term on the tape still exercises the max-over-objects backward.
    """
    first, second = scene.expressions[0], scene.expressions[1]
    table0 = model.score_expression(first.token_ids, scene.features, training=False)
    table1 = model.score_expression(second.token_ids, scene.features, training=False)
    weak = loss_weak(table0.subject_scores, first.subject_index)
    strong = loss_strong(table1.pair_scores, (second.subject_index, second.object_index))
    n = table0.n_candidates
    probe = ad.reduce_sum(table0.pair_scores) * (0.1 / (n * n))
    return weak + strong + probe


def micro_problem(seed: int = 17):
    """A tiny seeded training problem: 2x2 grid (4 candidates), 2 expressions.

    Returns (model, config, prepared scene). Dimensions are small enough to
    finite-difference every parameter entry in seconds.
    """
    data_config = ShapeWorldConfig(
        n_scenes=1,
        grid_size=2,
        seed=seed,
        expressions_per_scene=2,
        min_shapes=3,
        max_shapes=4,
        retry_budget=5000,
    )
    record = generate_scene(data_config, 0)
    vocab = Vocabulary(template_vocabulary(data_config.colors))
    scene = prepare_scene(record, vocab, data_config)
    train_config = TrainConfig(
        model="cmn",
        supervision="weak",
        embed_dim=6,
        hidden_dim=4,
        dropout_keep=1.0,
        seed=seed,
    )
    model = build_model(train_config, vocab, scene.features.matrix.shape[1])
    return model, train_config, scene


def run_micro_gradcheck(seed: int = 17, step: float = 1e-5) -> GradCheckReport:
    """Finite-difference check of every trainable tensor on the micro problem."""
    model, _, scene = micro_problem(seed)
    return check_gradients(lambda: micro_loss(model, scene), model.named_parameters(), step=step)
