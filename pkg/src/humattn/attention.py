"""Scaled dot-product attention, its prior-modulated variant, and SA/GA blocks.

A prior ``alpha`` multiplies the raw scores ``q·k`` before the ``1/sqrt(d)``
scaling. In ``per_key`` mode score ``s_ij`` is scaled by ``alpha_j``; in
``per_query`` mode row ``i`` is scaled by ``alpha_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError, ValidationError
from .layers import FeedForward, LayerNorm, Linear, Module
from .numcore import Tensor

NORM_MODES = ("sum_to_one", "mean_one")
APPLY_MODES = ("per_key", "per_query")


@dataclass
class AttentionPrior:
    """Nonnegative weight per position; ``weights`` has shape ``[..., n]``.

    ``weights`` may be a graph tensor (e.g. output of the text saliency net),
    in which case gradients flow through the modulation into it.
    """

    weights: Tensor
    norm_mode: str = "sum_to_one"
    apply_mode: str = "per_key"
    mask: np.ndarray | None = None

    def __post_init__(self):
        if not isinstance(self.weights, Tensor):
            self.weights = nc.as_tensor(np.asarray(self.weights, dtype=np.float64))
        if self.norm_mode not in NORM_MODES:
            raise ConfigError(f"unknown norm_mode {self.norm_mode!r}")
        if self.apply_mode not in APPLY_MODES:
            raise ConfigError(f"unknown apply_mode {self.apply_mode!r}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.weights.shape:
                raise DimensionError(f"prior mask {self.mask.shape} vs weights {self.weights.shape}")

    @property
    def length(self) -> int:
        return self.weights.shape[-1]

    def valid_mask(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.weights.shape, dtype=bool)
        return self.mask

    def validate(self, tol: float = 1e-6) -> None:
        w = self.weights.data
        if (w < 0).any():
            raise ValidationError("attention prior has negative weights")
        valid = self.valid_mask()
        if (w[~valid] != 0).any():
            raise ValidationError("attention prior has mass on masked positions")
        total = w.sum(axis=-1)
        count = valid.sum(axis=-1)
        if (count == 0).any():
            raise ValidationError("attention prior has no valid positions")
        stat = total if self.norm_mode == "sum_to_one" else total / count
        if np.abs(stat - 1.0).max() > tol:
            raise ValidationError(f"attention prior violates {self.norm_mode} normalisation")

    def renormalized(self, norm_mode: str) -> AttentionPrior:
        """Convert between ``sum_to_one`` and ``mean_one`` (differentiably)."""
        if norm_mode == self.norm_mode:
            return self
        if norm_mode not in NORM_MODES:
            raise ConfigError(f"unknown norm_mode {norm_mode!r}")
        count = self.valid_mask().sum(axis=-1, keepdims=True).astype(self.weights.dtype)
        factor = count if norm_mode == "mean_one" else 1.0 / count
        return AttentionPrior(nc.mul(self.weights, factor), norm_mode, self.apply_mode, self.mask)

    def with_apply_mode(self, apply_mode: str) -> AttentionPrior:
        return AttentionPrior(self.weights, self.norm_mode, apply_mode, self.mask)

    @classmethod
    def uniform(cls, mask, norm_mode: str = "sum_to_one", apply_mode: str = "per_key", dtype=np.float64):
        mask = np.asarray(mask, dtype=bool)
        count = mask.sum(axis=-1, keepdims=True)
        w = mask / count if norm_mode == "sum_to_one" else mask.astype(float)
        return cls(Tensor(w.astype(dtype)), norm_mode, apply_mode, mask)


@dataclass(frozen=True)
class MultiHeadConfig:
    d_model: int
    heads: int
    ffn_hidden: int | None = None

    def __post_init__(self):
        problems = []
        if self.d_model <= 0 or self.heads <= 0:
            problems.append("d_model and heads must be positive")
        elif self.d_model % self.heads:
            problems.append(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.ffn_hidden is not None and self.ffn_hidden <= 0:
            problems.append("ffn_hidden must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def ffn(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 4 * self.d_model


def _prior_factor(prior: AttentionPrior, n_q: int, n_k: int, head_axis: bool) -> Tensor:
    w = prior.weights
    n = w.shape[-1]
    if (w.data < 0).any():
        raise ValidationError("attention prior has negative weights")
    if prior.mask is not None and not prior.mask.all():
        # padded positions carry factor 1: excluded keys or ignored query rows
        w = nc.where(prior.mask, w, Tensor(np.ones((), dtype=w.dtype)))
    batch = w.shape[:-1]
    if prior.apply_mode == "per_key":
        if n != n_k:
            raise DimensionError(f"per_key prior length {n} != number of keys {n_k}")
        shape = batch + ((1,) if head_axis else ()) + (1, n)
    else:
        if n != n_q:
            raise DimensionError(f"per_query prior length {n} != number of queries {n_q}")
        shape = batch + ((1,) if head_axis else ()) + (n, 1)
    return nc.reshape(w, shape)


def attend(Q: Tensor, K: Tensor, V: Tensor, key_mask=None, prior: AttentionPrior | None = None,
           head_axis: bool = False) -> tuple[Tensor, Tensor]:
    """Shared pipeline: scores, optional prior product, ``/sqrt(d)``, masked softmax, ``@ V``.

    Inputs are ``[..., n, d]``. ``key_mask`` is ``[..., n_k]`` (``True`` = valid);
    for multi-head inputs the head axis sits just before ``n`` and
    ``head_axis=True`` inserts it into the mask and prior.
    """
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"K rows {K.shape} != V rows {V.shape}")
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query width {Q.shape} != key width {K.shape}")
    d = Q.shape[-1]
    n_q, n_k = Q.shape[-2], K.shape[-2]
    scores = nc.matmul(Q, nc.swapaxes(K, -1, -2))
    if prior is not None:
        scores = nc.mul(scores, _prior_factor(prior, n_q, n_k, head_axis))
    scores = nc.div(scores, math.sqrt(d))
    mask = None
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape[-1] != n_k:
            raise DimensionError(f"key mask length {key_mask.shape[-1]} != keys {n_k}")
        mask = key_mask[..., None, None, :] if head_axis else key_mask[..., None, :]
    weights = nc.softmax(scores, mask=mask)
    return nc.matmul(weights, V), weights


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, key_mask=None) -> Tensor:
    return attend(Q, K, V, key_mask)[0]


def prior_modulated_attention(Q: Tensor, K: Tensor, V: Tensor, alpha: AttentionPrior, key_mask=None,
                              validate: bool = True) -> Tensor:
    if validate:
        alpha.validate()
    return attend(Q, K, V, key_mask, prior=alpha)[0]


class MultiHeadAttention(Module):
    def __init__(self, rng, cfg: MultiHeadConfig, dtype=np.float64):
        self.cfg = cfg
        d = cfg.d_model
        self.q = Linear(rng, d, d, dtype)
        self.k = Linear(rng, d, d, dtype)
        self.v = Linear(rng, d, d, dtype)
        self.o = Linear(rng, d, d, dtype)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, n, _ = x.shape
        h, dh = self.cfg.heads, self.cfg.d_head
        return nc.transpose(nc.reshape(x, (B, n, h, dh)), (0, 2, 1, 3))

    def __call__(self, xq: Tensor, xk: Tensor, xv: Tensor, key_mask=None,
                 prior: AttentionPrior | None = None) -> Tensor:
        squeeze = xq.ndim == 2
        if squeeze:
            xq, xk, xv = (nc.reshape(t, (1,) + t.shape) for t in (xq, xk, xv))
            if key_mask is not None:
                key_mask = np.asarray(key_mask, dtype=bool)[None]
            if prior is not None:
                prior = AttentionPrior(nc.reshape(prior.weights, (1,) + prior.weights.shape), prior.norm_mode,
                                       prior.apply_mode, None if prior.mask is None else prior.mask[None])
        B, n_q, d = xq.shape
        if d != self.cfg.d_model:
            raise DimensionError(f"input width {d} != d_model {self.cfg.d_model}")
        Q, K, V = self._split(self.q(xq)), self._split(self.k(xk)), self._split(self.v(xv))
        out, w = attend(Q, K, V, key_mask, prior=prior, head_axis=True)
        self.last_weights = w.data
        out = nc.reshape(nc.transpose(out, (0, 2, 1, 3)), (B, n_q, d))
        out = self.o(out)
        if squeeze:
            out = nc.reshape(out, out.shape[1:])
        return out


def multi_head(Q_in: Tensor, K_in: Tensor, V_in: Tensor, mha: MultiHeadAttention, alpha=None, key_mask=None) -> Tensor:
    return mha(Q_in, K_in, V_in, key_mask=key_mask, prior=alpha)


class SelfAttention(Module):
    """SA block: ``LN(X + MHA(X, X, X))`` then ``LN(. + FFN(.))``."""

    def __init__(self, rng, cfg: MultiHeadConfig, dtype=np.float64):
        self.mha = MultiHeadAttention(rng, cfg, dtype)
        self.ffn = FeedForward(rng, cfg.d_model, cfg.ffn, dtype)
        self.ln1 = LayerNorm(cfg.d_model, dtype)
        self.ln2 = LayerNorm(cfg.d_model, dtype)

    def __call__(self, x: Tensor, mask=None, prior: AttentionPrior | None = None) -> Tensor:
        if mask is not None and not np.asarray(mask, dtype=bool).any(axis=-1).all():
            raise ValidationError("SA input has no valid positions")
        h = self.ln1(x + self.mha(x, x, x, key_mask=mask, prior=prior))
        return self.ln2(h + self.ffn(h))


class GuidedAttention(Module):
    """GA block: queries from ``x``, keys/values from ``y``; never takes a prior."""

    def __init__(self, rng, cfg: MultiHeadConfig, dtype=np.float64):
        self.mha = MultiHeadAttention(rng, cfg, dtype)
        self.ffn = FeedForward(rng, cfg.d_model, cfg.ffn, dtype)
        self.ln1 = LayerNorm(cfg.d_model, dtype)
        self.ln2 = LayerNorm(cfg.d_model, dtype)

    def __call__(self, x: Tensor, y: Tensor, x_mask=None, y_mask=None) -> Tensor:
        for name, m in (("x", x_mask), ("y", y_mask)):
            if m is not None and not np.asarray(m, dtype=bool).any(axis=-1).all():
                raise ValidationError(f"GA {name} input has no valid positions")
        h = self.ln1(x + self.mha(x, y, y, key_mask=y_mask))
        return self.ln2(h + self.ffn(h))


def sa_forward(X: Tensor, block: SelfAttention, alpha: AttentionPrior | None = None, mask=None) -> Tensor:
    return block(X, mask=mask, prior=alpha)


def ga_forward(X: Tensor, Y: Tensor, block: GuidedAttention, x_mask=None, y_mask=None) -> Tensor:
    return block(X, Y, x_mask=x_mask, y_mask=y_mask)
