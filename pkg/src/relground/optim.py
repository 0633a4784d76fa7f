"""Parameter initialization and stochastic gradient descent with momentum."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["xavier_init", "zeros_param", "SgdMomentum"]


def xavier_init(shape, rng: np.random.Generator) -> Tensor:
    """Uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).

    Fan sizes come from the last two extents; a vector counts as fan_out 1.
    """
    shape = tuple(int(n) for n in shape)
    if len(shape) == 0:
        raise ValueError("xavier_init needs at least a 1-D shape")
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_in, fan_out = shape[-2], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=True)


class SgdMomentum:
    """SGD with classical momentum and stepwise learning-rate decay.

    The effective rate at step count s is ``lr * decay_factor ** (s //
    decay_interval)``. Each step updates ``velocity = momentum * velocity -
    lr_eff * grad`` and adds the velocity to the parameter, then zeroes the
    gradient buffers.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float,
        momentum: float = 0.0,
        decay_factor: float = 1.0,
        decay_interval: int | None = None,
    ):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        if decay_interval is not None and decay_interval <= 0:
            raise ValueError(f"decay_interval must be positive, got {decay_interval}")
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.decay_factor = float(decay_factor)
        self.decay_interval = decay_interval
        self.step_count = 0
        self.velocity: dict[str, np.ndarray] = {
            name: np.zeros_like(t.values) for name, t in self.params.items()
        }

    @property
    def effective_lr(self) -> float:
        if self.decay_interval is None:
            return self.learning_rate
        return self.learning_rate * self.decay_factor ** (self.step_count // self.decay_interval)

    def step(self) -> None:
        lr = self.effective_lr
        for name, param in self.params.items():
            if param.grad is None:
                raise RuntimeError(f"parameter '{name}' has no gradient; run backward first")
            v = self.velocity[name]
            v *= self.momentum
            v -= lr * param.grad
            param.values += v
            param.grad[...] = 0.0
        self.step_count += 1

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()
