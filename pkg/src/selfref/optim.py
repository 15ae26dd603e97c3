"""Adam with bias correction, gradient-norm clipping and a cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, name: str = "param") -> np.ndarray:
    """Return the updated parameter; ``state`` is advanced in place."""
    if param.shape != grad.shape or state.first_moment.shape != param.shape:
        raise ValueError(f"{name}: shape mismatch param {param.shape}, grad {grad.shape}, moments {state.first_moment.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.size(grad) - np.count_nonzero(np.isfinite(grad)))
        raise FloatingPointError(f"non-finite gradient for parameter {name!r} ({bad} entries)")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment = b1 * state.first_moment + (1.0 - b1) * grad
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * grad * grad
    m_hat = state.first_moment / (1.0 - b1**state.step_count)
    v_hat = state.second_moment / (1.0 - b2**state.step_count)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Adam over a named parameter set.

    Parameters whose ``.grad`` is None are treated as having zero gradient,
    so their moments still decay and the step counter stays shared.
    """

    params: dict[str, Tensor]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states[name] = AdamState.zeros_like(
                p.data, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
            )

    def set_lr(self, lr: float) -> None:
        self.lr = lr
        for s in self.states.values():
            s.lr = lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data = adam_step(p.data, g, self.states[name], name)


def clip_grad_norm(params, max_norm: float) -> float:
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            p.grad = p.grad * scale
    return total


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Half-cosine decay from ``base_lr`` at epoch 0 to 0 at ``total_epochs``."""
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(epoch, total_epochs) / total_epochs))
