"""Neural building blocks on top of :mod:`selfref.tensor`."""

from __future__ import annotations

import math
import zlib
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class EmptySlotError(ValueError):
    """Attention was asked to attend over zero key/value slots."""


def make_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, component name).

    Keying streams by name means two agents that share a layer name get the
    same initial weights for it, whatever else they contain.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:n_in, :n_out])


class Module:
    """Walks attributes to enumerate parameters in a stable, named order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for k, p in own.items():
            if k not in state:
                continue
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{k}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init: str = "orthogonal",
                 gain: float = 1.0, bias: bool = True):
        if init == "orthogonal":
            w = orthogonal(rng, n_in, n_out, gain)
        elif init == "uniform":
            w = rng.uniform(-3e-3, 3e-3, size=(n_in, n_out))
        elif init == "zeros":
            w = np.zeros((n_in, n_out))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.weight, self.bias)


def forward_mlp(layers: Sequence[Linear], x, final_activation: str | None = None) -> Tensor:
    """Apply ``layers`` with ReLU between them.

    ``final_activation`` may be ``None``, ``"relu"`` or ``"tanh"``.
    """
    x = T.as_tensor(x)
    if x.shape[-1] != layers[0].n_in:
        raise ShapeError(f"MLP input last axis is {x.shape[-1]} but first layer expects {layers[0].n_in} (input shape {x.shape})")
    for layer in layers[:-1]:
        x = T.relu(layer(x))
    x = layers[-1](x)
    if final_activation == "relu":
        x = T.relu(x)
    elif final_activation == "tanh":
        x = T.tanh(x)
    return x


class MLP(Module):
    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, final_init: str = "orthogonal",
                 final_gain: float = 1.0, final_activation: str | None = None):
        self.layers = [
            Linear(a, b, rng, gain=math.sqrt(2.0)) for a, b in zip(sizes[:-2], sizes[1:-1])
        ]
        self.layers.append(Linear(sizes[-2], sizes[-1], rng, init=final_init, gain=final_gain))
        self.final_activation = final_activation

    def __call__(self, x) -> Tensor:
        return forward_mlp(self.layers, x, self.final_activation)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, scale: float = 0.1):
        self.weight = Tensor(scale * rng.standard_normal((num, dim)), requires_grad=True)

    def __call__(self, index) -> Tensor:
        return T.getitem(self.weight, np.asarray(index))


class MultiHeadAttention(Module):
    """Cross-attention of one query vector per batch row over M key/value slots."""

    def __init__(self, model_dim: int, num_heads: int, rng: np.random.Generator):
        if model_dim % num_heads:
            raise ValueError(f"model_dim {model_dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.model_dim = model_dim
        self.q_proj = Linear(model_dim, model_dim, rng)
        self.k_proj = Linear(model_dim, model_dim, rng)
        self.v_proj = Linear(model_dim, model_dim, rng)
        self.out_proj = Linear(model_dim, model_dim, rng)
        self.last_weights: np.ndarray | None = None

    def __call__(self, q, keys, values) -> Tensor:
        """``q`` is (B, U) and ``keys``/``values`` are (B, M, U); returns (B, U).

        Unbatched inputs (1, U) with (M, U) are accepted and return (1, U).
        """
        q, keys, values = T.as_tensor(q), T.as_tensor(keys), T.as_tensor(values)
        if keys.data.ndim == 2:
            keys = T.reshape(keys, (1,) + keys.shape)
            values = T.reshape(values, (1,) + values.shape)
        b, m, u = keys.shape
        if m == 0:
            raise EmptySlotError("attention needs at least one key/value slot")
        if u != self.model_dim or q.shape[-1] != self.model_dim:
            raise ShapeError(f"attention expects model_dim {self.model_dim}, got q {q.shape}, keys {keys.shape}")
        h = self.num_heads
        dh = u // h
        qh = T.reshape(self.q_proj(q), (b, h, 1, dh))
        kh = T.transpose(T.reshape(self.k_proj(keys), (b, m, h, dh)), (0, 2, 3, 1))
        vh = T.transpose(T.reshape(self.v_proj(values), (b, m, h, dh)), (0, 2, 1, 3))
        scores = T.matmul(qh, kh) * (1.0 / math.sqrt(dh))
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data.reshape(b, h, m)
        mixed = T.reshape(T.matmul(weights, vh), (b, u))
        return self.out_proj(mixed)


def multi_head_attention(mha: MultiHeadAttention, q, keys, values) -> Tensor:
    return mha(q, keys, values)


def copy_parameters(dst: Module, src: Module) -> None:
    for (_, p), (_, s) in zip(dst.named_parameters(), src.named_parameters()):
        p.data = s.data.copy()


def soft_update(target: Module, source: Module, tau: float) -> None:
    """target <- (1 - tau) * target + tau * source, parameter-wise."""
    for (_, p), (_, s) in zip(target.named_parameters(), source.named_parameters()):
        if tau == 1.0:
            p.data = s.data.copy()
        elif tau != 0.0:
            p.data = (1.0 - tau) * p.data + tau * s.data
