"""Batching, the training loop, evaluation and run reports."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .attention import AttentionPrior
from .data import MAX_TOKENS, QTYPES, Dataset, VqaSample, tokenize
from .errors import ConfigError, DataError, NumericalError
from .metrics import soft_targets, vqa_accuracy
from .model import IntegrationConfig, ModelConfig, VQAModel, count_parameters, save_checkpoint
from .numcore import Tensor
from .optim import AdamState, adam_step, lr_at

log = logging.getLogger(__name__)

TEXT_PRIOR_SOURCES = ("tsm", "oracle")


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 12
    lr: float = 1e-4
    warmup_epochs: int = 3
    warmup_start: float = 0.25
    decay_epochs: tuple = (10, 12)
    decay_factor: float = 0.2
    seed: int = 0
    text_prior_source: str = "tsm"
    tsm_pretrain_epochs: int = 0
    tsm_pretrain_lr: float = 1e-3

    def validate(self) -> None:
        problems = []
        for name in ("batch_size", "epochs"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.lr <= 0 or self.tsm_pretrain_lr <= 0:
            problems.append("learning rates must be positive")
        if self.warmup_epochs < 0 or self.tsm_pretrain_epochs < 0:
            problems.append("epoch counts must be nonnegative")
        if not 0 < self.warmup_start <= 1:
            problems.append("warmup_start must lie in (0, 1]")
        if not 0 < self.decay_factor <= 1:
            problems.append("decay_factor must lie in (0, 1]")
        if any(d < 0 for d in self.decay_epochs):
            problems.append("decay epochs must be nonnegative")
        if self.text_prior_source not in TEXT_PRIOR_SOURCES:
            problems.append(f"text_prior_source must be one of {TEXT_PRIOR_SOURCES}")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        d = dict(d)
        if "decay_epochs" in d:
            d["decay_epochs"] = tuple(d["decay_epochs"])
        return cls(**d)

    def lr_for(self, epoch: int) -> float:
        return lr_at(epoch, self.lr, self.warmup_epochs, self.warmup_start, self.decay_epochs, self.decay_factor)


@dataclass
class EncodedSplit:
    """Dense arrays for one split; rows align with ``samples``."""

    samples: list[VqaSample]
    q_emb: np.ndarray
    q_mask: np.ndarray
    img: np.ndarray
    img_mask: np.ndarray
    text_prior: np.ndarray
    image_prior: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)

    def batch(self, idx, dtype) -> Batch:
        idx = np.asarray(idx)
        return Batch(
            [self.samples[i] for i in idx],
            Tensor(self.q_emb[idx].astype(dtype)), self.q_mask[idx],
            Tensor(self.img[idx].astype(dtype)), self.img_mask[idx],
            self.text_prior[idx].astype(dtype), self.image_prior[idx].astype(dtype),
            self.targets[idx].astype(dtype),
        )


@dataclass
class Batch:
    samples: list[VqaSample]
    q_emb: Tensor
    q_mask: np.ndarray
    img: Tensor
    img_mask: np.ndarray
    text_prior: np.ndarray
    image_prior: np.ndarray
    targets: np.ndarray


def encode_split(ds: Dataset, split: str) -> EncodedSplit:
    samples = ds.split(split)
    if not samples:
        raise DataError(f"split {split!r} is empty")
    d_word = len(next(iter(ds.embeddings.values())))
    m_max = max(ds.features[s.image].shape[0] * ds.features[s.image].shape[1] for s in samples)
    d_x = next(iter(ds.features.values())).shape[2]
    vocab = ds.answer_index
    N = len(samples)
    q_emb = np.zeros((N, MAX_TOKENS, d_word), np.float32)
    q_mask = np.zeros((N, MAX_TOKENS), bool)
    img = np.zeros((N, m_max, d_x), np.float32)
    img_mask = np.zeros((N, m_max), bool)
    tp = np.zeros((N, MAX_TOKENS), np.float64)
    ip = np.zeros((N, m_max), np.float64)
    targets = np.zeros((N, len(vocab)), np.float32)
    zero = np.zeros(d_word, np.float32)
    for i, s in enumerate(samples):
        n = len(s.tokens)
        q_emb[i, :n] = [ds.embeddings.get(t, zero) for t in s.tokens]
        q_mask[i, :n] = True
        f = ds.features[s.image]
        m = f.shape[0] * f.shape[1]
        img[i, :m] = f.reshape(m, -1)
        img_mask[i, :m] = True
        tp[i, :n] = s.text_prior.ravel() if s.text_prior is not None else 1.0 / n
        ip[i, :m] = s.image_prior.ravel() if s.image_prior is not None else 1.0 / m
        targets[i] = soft_targets(s.answers, vocab)
    # stored priors are float32; renormalise in float64 so sums are exact to rounding
    tp /= tp.sum(axis=1, keepdims=True)
    ip /= ip.sum(axis=1, keepdims=True)
    return EncodedSplit(samples, q_emb, q_mask, img, img_mask, tp, ip, targets)


def question_arrays(text: str, table: dict) -> tuple[np.ndarray, np.ndarray]:
    tokens = tokenize(text)[:MAX_TOKENS]
    d = len(next(iter(table.values())))
    emb = np.zeros((MAX_TOKENS, d), np.float32)
    for i, t in enumerate(tokens):
        emb[i] = table.get(t, 0.0)
    mask = np.zeros(MAX_TOKENS, bool)
    mask[:len(tokens)] = True
    return emb, mask


def priors_for(model: VQAModel, batch: Batch, integ: IntegrationConfig, text_source: str):
    text_prior = image_prior = None
    if integ.uses_text:
        if text_source == "tsm":
            text_prior = model.text_prior(batch.q_emb, batch.q_mask)
        else:
            text_prior = AttentionPrior(Tensor(batch.text_prior), "sum_to_one", mask=batch.q_mask)
    if integ.uses_image:
        image_prior = AttentionPrior(Tensor(batch.image_prior), "sum_to_one", mask=batch.img_mask)
    return text_prior, image_prior


def run_batch(model: VQAModel, batch: Batch, integ: IntegrationConfig, text_source: str = "tsm"):
    tp, ip = priors_for(model, batch, integ, text_source)
    return model(batch.q_emb, batch.q_mask, batch.img, batch.img_mask, tp, ip, integ)


@dataclass
class EvalRecord:
    id: int
    qtype: str
    length: int
    prediction: str
    accuracy: float


def evaluate(model: VQAModel, split: EncodedSplit, answers: list[str], integ: IntegrationConfig,
             text_source: str = "tsm", batch_size: int = 256) -> list[EvalRecord]:
    out = []
    dt = model.cfg.np_dtype
    with nc.no_grad():
        for start in range(0, len(split), batch_size):
            b = split.batch(np.arange(start, min(start + batch_size, len(split))), dt)
            res = run_batch(model, b, integ, text_source)
            # ties go to the lowest answer index
            pred = np.argmax(res.scores, axis=1)
            for s, p in zip(b.samples, pred):
                a = answers[p]
                out.append(EvalRecord(s.id, s.qtype, len(s.tokens), a, vqa_accuracy(a, s.answers)))
    return out


def overall_accuracy(records: list[EvalRecord]) -> float:
    return float(np.mean([r.accuracy for r in records])) if records else float("nan")


def per_bin_accuracy(records: list[EvalRecord]) -> dict[str, float | None]:
    out = {}
    for q in QTYPES:
        accs = [r.accuracy for r in records if r.qtype == q]
        out[q] = float(np.mean(accs)) if accs else None
    return out


def per_length_accuracy(records: list[EvalRecord]) -> dict[int, float | None]:
    out = {}
    for n in range(1, MAX_TOKENS + 1):
        accs = [r.accuracy for r in records if r.length == n]
        out[n] = float(np.mean(accs)) if accs else None
    return out


def fingerprint(*parts) -> str:
    blob = json.dumps([p if isinstance(p, (dict, list, str, int, float)) else str(p) for p in parts],
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunReport:
    config: dict
    fingerprint: str
    parameter_count: int
    epoch_loss: list[float] = field(default_factory=list)
    epoch_val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    overall_accuracy: float = float("nan")
    per_bin: dict = field(default_factory=dict)
    per_length: dict = field(default_factory=dict)
    status: str = "ok"
    notes: list[str] = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def to_json(self, include_timing: bool = True) -> str:
        d = asdict(self)
        if not include_timing:
            d.pop("timing")
        d["per_length"] = {str(k): v for k, v in d["per_length"].items()}
        return json.dumps(d, sort_keys=True, indent=2) + "\n"


SCHEDULE_NOTE = ("optimizer betas/eps and the warmup/decay schedule are reconstructed conventions, "
                 "not values taken from the original training setup")


def pretrain_text_prior(model: VQAModel, split: EncodedSplit, cfg: TrainConfig) -> list[float]:
    """Supervised warm start of the text saliency net on oracle token priors (cross-entropy)."""
    params = {n: p for n, p in model.named_parameters() if n.startswith("tsm.")}
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 7])
    dt = model.cfg.np_dtype
    losses, step = [], 0
    for _ in range(cfg.tsm_pretrain_epochs):
        perm = rng.permutation(len(split))
        total = 0.0
        for start in range(0, len(split), cfg.batch_size):
            b = split.batch(perm[start:start + cfg.batch_size], dt)
            model.zero_grad()
            w = model.text_prior(b.q_emb, b.q_mask).weights
            logw = nc.log(w + np.where(b.q_mask, 0.0, 1.0).astype(dt) + 1e-12)
            loss = nc.neg(nc.tsum(nc.mul(logw, b.text_prior))) * (1.0 / len(b.samples))
            nc.backward(loss)
            step += 1
            adam_step({n: p.data for n, p in params.items()}, {n: p.grad for n, p in params.items()}, state, step,
                      cfg.tsm_pretrain_lr)
            total += loss.item() * len(b.samples)
        losses.append(total / len(split))
    return losses


def train(model: VQAModel, ds: Dataset, integ: IntegrationConfig, cfg: TrainConfig, out_dir=None,
          train_split: EncodedSplit | None = None, val_split: EncodedSplit | None = None,
          on_epoch=None) -> RunReport:
    """Jointly optimise the model (and the text saliency net, when it feeds the encoder).

    Keeps the parameters of the best validation epoch and, if ``out_dir`` is
    given, writes ``checkpoint.mhan``, ``report.json`` and ``eval.jsonl``.
    """
    cfg.validate()
    integ.validate(model.cfg)
    t0 = time.perf_counter()
    train_split = train_split or encode_split(ds, "train")
    val_split = val_split or encode_split(ds, "val")
    config = {"model": json.loads(model.cfg.canonical()), "train": asdict(cfg), "integration": integ.to_dict(),
              "data": ds.manifest.get("spec", {}), "data_seed": ds.manifest.get("seed")}
    report = RunReport(config, fingerprint(config), count_parameters(model.cfg),
                       notes=[SCHEDULE_NOTE])
    if integ.uses_text and cfg.text_prior_source == "tsm" and cfg.tsm_pretrain_epochs:
        pre = pretrain_text_prior(model, train_split, cfg)
        report.notes.append(f"text prior net warm-started on oracle priors, final CE {pre[-1]:.6f}")
    params = dict(model.named_parameters())
    state = AdamState()
    dt = model.cfg.np_dtype
    best = (-1.0, None, None)
    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = cfg.lr_for(epoch)
            perm = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(train_split))
            total = 0.0
            for start in range(0, len(perm), cfg.batch_size):
                b = train_split.batch(perm[start:start + cfg.batch_size], dt)
                model.zero_grad()
                res = run_batch(model, b, integ, cfg.text_prior_source)
                loss = nc.bce_with_logits(res.logits, b.targets)
                if not np.isfinite(loss.data):
                    raise NumericalError(f"loss diverged at epoch {epoch}")
                nc.backward(loss)
                step += 1
                adam_step({n: p.data for n, p in params.items()}, {n: p.grad for n, p in params.items()},
                          state, step, lr)
                total += loss.item() * len(b.samples)
            report.epoch_loss.append(total / len(train_split))
            recs = evaluate(model, val_split, ds.answers, integ, cfg.text_prior_source)
            acc = overall_accuracy(recs)
            report.epoch_val_accuracy.append(acc)
            log.info("epoch %d lr %.2e loss %.5f val %.4f", epoch + 1, lr, report.epoch_loss[-1], acc)
            if acc > best[0]:
                best = (acc, epoch, {n: p.data.copy() for n, p in params.items()})
            if on_epoch is not None:
                on_epoch(epoch, model)
    except NumericalError as exc:
        report.status = "aborted"
        report.notes.append(str(exc))
        log.error("training aborted: %s", exc)
        if best[2] is None:
            raise
    acc, epoch, snapshot = best
    for n, arr in snapshot.items():
        params[n].data = arr
    records = evaluate(model, val_split, ds.answers, integ, cfg.text_prior_source)
    report.best_epoch = epoch + 1
    report.overall_accuracy = overall_accuracy(records)
    report.per_bin = per_bin_accuracy(records)
    report.per_length = per_length_accuracy(records)
    report.timing = {"seconds": round(time.perf_counter() - t0, 3), "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.mhan", model, {"integration": integ.to_dict(),
                                                         "text_prior_source": cfg.text_prior_source})
        (out / "report.json").write_text(report.to_json())
        write_eval(out / "eval.jsonl", records)
    report._records = records  # type: ignore[attr-defined]
    return report


def write_eval(path, records: list[EvalRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_eval(path) -> list[EvalRecord]:
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            if line.strip():
                try:
                    out.append(EvalRecord(**json.loads(line)))
                except (TypeError, ValueError) as exc:
                    raise DataError(f"{path}: malformed eval record {i}") from exc
    return out


def clone_model(model: VQAModel) -> VQAModel:
    return copy.deepcopy(model)
