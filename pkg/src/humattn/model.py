"""Encoder-decoder co-attention VQA model with configurable prior integration.

Encoder: stacked SA blocks over question features; the text prior enters the
SA blocks listed in ``IntegrationConfig.text_layers``. Decoder: per layer an
SA block over image features (image prior injected when the layer is listed
in ``image_layers``) followed by a GA block whose keys/values are the final
encoder output. Both streams are pooled by attention reduction, summed,
layer-normalised and classified with a sigmoid head.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .attention import APPLY_MODES, NORM_MODES, AttentionPrior, GuidedAttention, MultiHeadConfig, SelfAttention
from .errors import ConfigError, FormatError
from .layers import (
    LSTM,
    LayerNorm,
    Linear,
    Module,
    ffn_count,
    layer_norm_count,
    linear_count,
    lstm_count,
)
from .numcore import Tensor
from .saliency import TextSaliencyNet

CHECKPOINT_MAGIC = b"MHAN"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_model: int = 64
    heads: int = 4
    ffn_hidden: int | None = None
    enc_layers: int = 2
    dec_layers: int = 2
    d_x: int = 48
    d_y: int = 64
    d_word: int = 32
    answers: int = 25
    fused_dim: int | None = None
    use_lstm: bool = True
    prior_hidden: int = 128
    prior_heads: int = 4
    dtype: str = "float32"

    @property
    def ffn(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 4 * self.d_model

    @property
    def fused(self) -> int:
        return self.fused_dim if self.fused_dim is not None else 2 * self.d_model

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def validate(self) -> None:
        problems = []
        for name in ("d_model", "heads", "enc_layers", "dec_layers", "d_x", "d_y", "d_word", "answers",
                     "prior_hidden", "prior_heads"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive (got {getattr(self, name)})")
        for name in ("ffn_hidden", "fused_dim"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                problems.append(f"{name} must be positive (got {v})")
        if self.d_model > 0 and self.heads > 0 and self.d_model % self.heads:
            problems.append(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.prior_hidden > 0 and self.prior_heads > 0 and self.prior_hidden % self.prior_heads:
            problems.append(f"prior_hidden={self.prior_hidden} not divisible by prior_heads={self.prior_heads}")
        if self.dtype not in ("float32", "float64"):
            problems.append(f"dtype must be float32 or float64 (got {self.dtype})")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def full_scale(cls, answers: int = 3129) -> ModelConfig:
        return cls(d_model=512, heads=8, enc_layers=6, dec_layers=6, d_x=2048, d_y=512, d_word=300,
                   answers=answers, fused_dim=1024, prior_hidden=128, prior_heads=4)


@dataclass(frozen=True)
class IntegrationConfig:
    """Which SA layers (1-based) receive which prior, and how it is applied."""

    text_layers: frozenset = field(default_factory=frozenset)
    image_layers: frozenset = field(default_factory=frozenset)
    apply_mode: str = "per_key"
    norm_mode: str = "sum_to_one"

    def __post_init__(self):
        object.__setattr__(self, "text_layers", frozenset(int(i) for i in self.text_layers))
        object.__setattr__(self, "image_layers", frozenset(int(i) for i in self.image_layers))
        if self.apply_mode not in APPLY_MODES:
            raise ConfigError(f"apply_mode must be one of {APPLY_MODES}")
        if self.norm_mode not in NORM_MODES:
            raise ConfigError(f"norm_mode must be one of {NORM_MODES}")

    def validate(self, cfg: ModelConfig) -> None:
        bad = [f"text layer {i}" for i in sorted(self.text_layers) if not 1 <= i <= cfg.enc_layers]
        bad += [f"image layer {i}" for i in sorted(self.image_layers) if not 1 <= i <= cfg.dec_layers]
        if bad:
            raise ConfigError(f"layer index out of range ({cfg.enc_layers} enc / {cfg.dec_layers} dec): "
                              + ", ".join(bad))

    @property
    def uses_text(self) -> bool:
        return bool(self.text_layers)

    @property
    def uses_image(self) -> bool:
        return bool(self.image_layers)

    def label(self) -> str:
        def fmt(s):
            return ",".join(str(i) for i in sorted(s)) or "-"
        return f"text[{fmt(self.text_layers)}]/image[{fmt(self.image_layers)}]"

    def to_dict(self) -> dict:
        return {"text_layers": sorted(self.text_layers), "image_layers": sorted(self.image_layers),
                "apply_mode": self.apply_mode, "norm_mode": self.norm_mode}

    @classmethod
    def preset(cls, name: str, text_layers=(1,), image_layers=(2,), **kw) -> IntegrationConfig:
        table = {"none": ((), ()), "text": (text_layers, ()), "image": ((), image_layers),
                 "both": (text_layers, image_layers)}
        if name not in table:
            raise ConfigError(f"unknown integration preset {name!r}")
        t, i = table[name]
        return cls(frozenset(t), frozenset(i), **kw)


class AttentionReduce(Module):
    """Two-layer MLP scores positions; masked softmax pools them; a linear maps to the fused width."""

    def __init__(self, rng, d_model: int, d_out: int, dtype):
        self.fc1 = Linear(rng, d_model, d_model, dtype)
        self.fc2 = Linear(rng, d_model, 1, dtype)
        self.merge = Linear(rng, d_model, d_out, dtype)

    def __call__(self, F: Tensor, mask) -> tuple[Tensor, Tensor]:
        squeeze = F.ndim == 2
        if squeeze:
            F = nc.reshape(F, (1,) + F.shape)
            mask = None if mask is None else np.asarray(mask, dtype=bool)[None]
        B, n, d = F.shape
        s = self.fc2(nc.relu(self.fc1(F)))
        w = nc.softmax(nc.reshape(s, (B, n)), mask=mask)
        pooled = nc.reshape(nc.matmul(nc.reshape(w, (B, 1, n)), F), (B, d))
        out = self.merge(pooled)
        if squeeze:
            out, w = nc.reshape(out, out.shape[1:]), nc.reshape(w, w.shape[1:])
        return out, w


def attended_reduce(F: Tensor, module: AttentionReduce, mask=None) -> tuple[Tensor, Tensor]:
    return module(F, mask)


@dataclass
class ForwardOutput:
    logits: Tensor
    text_weights: Tensor
    image_weights: Tensor

    @property
    def scores(self) -> np.ndarray:
        return nc._sigmoid_np(self.logits.data)


class VQAModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        dt = cfg.np_dtype
        rng = np.random.default_rng(seed)
        mh = MultiHeadConfig(cfg.d_model, cfg.heads, cfg.ffn)
        if cfg.use_lstm:
            self.q_rnn = LSTM(rng, cfg.d_word, cfg.d_y, dt)
        else:
            self.q_in = Linear(rng, cfg.d_word, cfg.d_y, dt)
        self.q_proj = Linear(rng, cfg.d_y, cfg.d_model, dt)
        self.img_proj = Linear(rng, cfg.d_x, cfg.d_model, dt)
        self.encoder = [SelfAttention(rng, mh, dt) for _ in range(cfg.enc_layers)]
        self.dec_sa = [SelfAttention(rng, mh, dt) for _ in range(cfg.dec_layers)]
        self.dec_ga = [GuidedAttention(rng, mh, dt) for _ in range(cfg.dec_layers)]
        self.reduce_y = AttentionReduce(rng, cfg.d_model, cfg.fused, dt)
        self.reduce_x = AttentionReduce(rng, cfg.d_model, cfg.fused, dt)
        self.fuse_ln = LayerNorm(cfg.fused, dt)
        self.classifier = Linear(rng, cfg.fused, cfg.answers, dt)
        # built last so the main parameters do not depend on its presence
        self.tsm = TextSaliencyNet(rng, cfg.d_word, cfg.prior_hidden, cfg.prior_heads, dt)

    def main_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("tsm.")]

    def text_prior(self, q_emb: Tensor, q_mask, apply_mode: str = "per_key") -> AttentionPrior:
        return self.tsm(q_emb, q_mask, apply_mode)

    def encode_question(self, q_emb: Tensor, q_mask) -> Tensor:
        h = self.q_rnn(q_emb, q_mask) if self.cfg.use_lstm else self.q_in(q_emb)
        return self.q_proj(h)

    def forward(self, q_emb: Tensor, q_mask, img: Tensor, img_mask, text_prior: AttentionPrior | None = None,
                image_prior: AttentionPrior | None = None,
                integ: IntegrationConfig | None = None) -> ForwardOutput:
        integ = integ or IntegrationConfig()
        integ.validate(self.cfg)
        if integ.uses_text and text_prior is None:
            raise ConfigError(f"text prior required for encoder layers {sorted(integ.text_layers)}")
        if integ.uses_image and image_prior is None:
            raise ConfigError(f"image prior required for decoder layers {sorted(integ.image_layers)}")
        q_mask = np.asarray(q_mask, dtype=bool)
        img_mask = np.asarray(img_mask, dtype=bool)
        tp = _prepare(text_prior, q_mask, integ) if integ.uses_text else None
        ip = _prepare(image_prior, img_mask, integ) if integ.uses_image else None

        y = self.encode_question(q_emb, q_mask)
        for i, block in enumerate(self.encoder, start=1):
            y = block(y, mask=q_mask, prior=tp if i in integ.text_layers else None)
        x = self.img_proj(img)
        for i, (sa, ga) in enumerate(zip(self.dec_sa, self.dec_ga), start=1):
            x = sa(x, mask=img_mask, prior=ip if i in integ.image_layers else None)
            x = ga(x, y, x_mask=img_mask, y_mask=q_mask)
        y_att, y_w = self.reduce_y(y, q_mask)
        x_att, x_w = self.reduce_x(x, img_mask)
        return ForwardOutput(fuse_and_classify(y_att, x_att, self.fuse_ln, self.classifier), y_w, x_w)

    __call__ = forward


def _prepare(prior: AttentionPrior, mask: np.ndarray, integ: IntegrationConfig) -> AttentionPrior:
    if prior.mask is None:
        prior = AttentionPrior(prior.weights, prior.norm_mode, prior.apply_mode, mask)
    return prior.renormalized(integ.norm_mode).with_apply_mode(integ.apply_mode)


def fuse_and_classify(y_att: Tensor, x_att: Tensor, ln: LayerNorm, classifier: Linear) -> Tensor:
    """Returns answer logits; ``sigmoid`` of them gives the answer scores."""
    return classifier(ln(y_att + x_att))


def build(cfg: ModelConfig, seed: int = 0) -> VQAModel:
    return VQAModel(cfg, seed)


# parameter accounting

def sa_count(d_model: int, ffn_hidden: int) -> int:
    return 4 * linear_count(d_model, d_model) + ffn_count(d_model, ffn_hidden) + 2 * layer_norm_count(d_model)


def text_prior_net_count(d_word: int, hidden: int) -> int:
    return (2 * lstm_count(d_word, hidden) + linear_count(2 * hidden, hidden) + sa_count(hidden, 4 * hidden)
            + linear_count(hidden, 1))


def count_parameters(cfg: ModelConfig, include_text_prior_net: bool = True, vocab_size: int = 0) -> int:
    """Closed-form trainable parameter count.

    ``vocab_size`` adds a ``vocab_size x d_word`` word-embedding table; the
    built model ingests fixed embeddings, so the default leaves it out.
    """
    cfg.validate()
    d, f = cfg.d_model, cfg.fused
    q = lstm_count(cfg.d_word, cfg.d_y) if cfg.use_lstm else linear_count(cfg.d_word, cfg.d_y)
    total = q + linear_count(cfg.d_y, d) + linear_count(cfg.d_x, d)
    total += cfg.enc_layers * sa_count(d, cfg.ffn) + 2 * cfg.dec_layers * sa_count(d, cfg.ffn)
    total += 2 * (linear_count(d, d) + linear_count(d, 1) + linear_count(d, f))
    total += layer_norm_count(f) + linear_count(f, cfg.answers)
    if include_text_prior_net:
        total += text_prior_net_count(cfg.d_word, cfg.prior_hidden)
    return total + vocab_size * cfg.d_word


def enumerate_parameters(model: VQAModel, include_text_prior_net: bool = True) -> int:
    return sum(p.data.size for n, p in model.named_parameters()
               if include_text_prior_net or not n.startswith("tsm."))


# checkpoints

def save_checkpoint(path, model: VQAModel, extra: dict | None = None) -> None:
    cfg_text = model.cfg.canonical().encode()
    meta = json.dumps(extra or {}, sort_keys=True).encode()
    params = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(cfg_text)))
        fh.write(cfg_text)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.asarray(p.data, dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    try:
        version, n = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        cfg = ModelConfig.from_dict(json.loads(raw[pos:pos + n].decode()))
        pos += n
        (n,) = struct.unpack_from("<I", raw, pos)
        meta = json.loads(raw[pos + 4:pos + 4 + n].decode())
        pos += 4 + n
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            (ndim,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape))
            if pos + 4 * size > len(raw):
                raise FormatError(f"{path}: truncated parameter {name}")
            params[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes")
    return cfg, params, meta


def load_checkpoint(path) -> tuple[VQAModel, dict]:
    cfg, params, meta = read_checkpoint(path)
    model = VQAModel(cfg)
    own = dict(model.named_parameters())
    if set(own) != set(params):
        raise FormatError(f"{path}: parameter names do not match the config")
    for name, arr in params.items():
        if own[name].shape != arr.shape:
            raise FormatError(f"{path}: shape mismatch for {name}")
        own[name].data = arr.astype(cfg.np_dtype)
    return model, meta
