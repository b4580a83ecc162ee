"""Adam with bias correction and the warmup / step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], state: AdamState, t: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9) -> None:
    """In-place update of ``params``; names with a ``None`` gradient are treated as zero-gradient."""
    if t < 1:
        raise ValueError("adam step counter starts at 1")
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise NumericalError(f"non-finite gradient for {name} at step {t} ({bad} entries)")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            if name not in state.m:
                continue  # zero moments, zero update
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        else:
            v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    state.t = t


def lr_at(epoch: int, base_lr: float, warmup_epochs: int = 3, warmup_start: float = 0.25,
          decay_epochs=(10, 12), decay_factor: float = 0.2) -> float:
    """Learning rate for 0-based ``epoch``.

    Warmup climbs linearly from ``warmup_start * base_lr`` to ``base_lr`` over
    ``warmup_epochs``; each entry of ``decay_epochs`` (0-based epoch at which
    the decay starts) multiplies by ``decay_factor``.
    """
    if epoch < warmup_epochs:
        frac = warmup_start + (1.0 - warmup_start) * epoch / warmup_epochs
        lr = base_lr * frac
    else:
        lr = base_lr
    for d in decay_epochs:
        if epoch >= d:
            lr *= decay_factor
    return lr
