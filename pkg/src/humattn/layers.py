"""Parameter containers built on numcore."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import numcore as nc
from .numcore import Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


class Module:
    """Walks attributes in assignment order to produce stable parameter names."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, dtype=np.float64, bias: bool = True):
        self.weight = Tensor(xavier_uniform(rng, d_in, d_out, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = nc.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float64, eps: float = 1e-6):
        self.gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return nc.layer_norm(x, self.gamma, self.beta, self.eps)


class LSTM(Module):
    """One recurrent layer with a single bias vector (4H)."""

    def __init__(self, rng, d_in: int, hidden: int, dtype=np.float64):
        self.w_in = Tensor(xavier_uniform(rng, d_in, 4 * hidden, dtype), requires_grad=True)
        self.w_hh = Tensor(xavier_uniform(rng, hidden, 4 * hidden, dtype), requires_grad=True)
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.bias = Tensor(b, requires_grad=True)
        self.hidden = hidden

    def __call__(self, x: Tensor, mask=None, reverse: bool = False) -> Tensor:
        return nc.lstm(x, self.w_in, self.w_hh, self.bias, mask=mask, reverse=reverse)


class FeedForward(Module):
    def __init__(self, rng, d_model: int, hidden: int, dtype=np.float64):
        self.fc1 = Linear(rng, d_model, hidden, dtype)
        self.fc2 = Linear(rng, hidden, d_model, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(nc.relu(self.fc1(x)))


def linear_count(d_in: int, d_out: int, bias: bool = True) -> int:
    return d_in * d_out + (d_out if bias else 0)


def lstm_count(d_in: int, hidden: int) -> int:
    return 4 * hidden * (d_in + hidden) + 4 * hidden


def layer_norm_count(d: int) -> int:
    return 2 * d


def ffn_count(d_model: int, hidden: int) -> int:
    return linear_count(d_model, hidden) + linear_count(hidden, d_model)
