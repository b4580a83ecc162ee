"""Experiment harness: ablations, layer sweeps, breakdown reports and attention dumps."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numcore as nc
from .data import MAX_TOKENS, QTYPES, Dataset
from .errors import ConfigError, HumattnError
from .metrics import paired_ttest
from .model import IntegrationConfig, ModelConfig, VQAModel
from .training import EncodedSplit, EvalRecord, TrainConfig, encode_split, priors_for, run_batch, train

log = logging.getLogger(__name__)

VARIANTS = ("none", "text", "image", "both")

# (text layers, image layers) combinations studied for a 6+6 model
STUDIED_LAYER_COMBOS = [
    ((1,), (2,)),
    ((2,), (2,)),
    ((1, 3, 5), (2,)),
    ((1,), (1, 2, 3, 4, 5, 6)),
    ((1, 2, 3), (2,)),
    ((1, 2, 3, 4, 5, 6), (2,)),
    ((1, 2, 3, 4, 5, 6), (2, 3, 4, 5, 6)),
]


@dataclass
class Run:
    label: str
    seed: int
    accuracy: float
    records: list[EvalRecord]
    report: object = None


@dataclass
class AblationRow:
    variant: str
    integration: str
    accuracies: list[float]
    median: float
    delta_vs_none: float = 0.0

    def as_csv(self) -> dict:
        return {"variant": self.variant, "integration": self.integration,
                "seeds": len(self.accuracies), "median": f"{self.median:.6f}",
                "delta_vs_none": f"{self.delta_vs_none:+.6f}",
                "accuracies": " ".join(f"{a:.6f}" for a in self.accuracies)}


@dataclass
class AblationResult:
    rows: list[AblationRow]
    runs: dict[str, list[Run]] = field(default_factory=dict)

    def row(self, variant: str) -> AblationRow:
        return next(r for r in self.rows if r.variant == variant)


def run_once(ds: Dataset, model_cfg: ModelConfig, integ: IntegrationConfig, train_cfg: TrainConfig, seed: int,
             splits: tuple[EncodedSplit, EncodedSplit] | None = None, out_dir=None) -> Run:
    model = VQAModel(model_cfg, seed=seed)
    rep = train(model, ds, integ, replace(train_cfg, seed=seed), out_dir=out_dir,
                train_split=splits[0] if splits else None, val_split=splits[1] if splits else None)
    return Run(integ.label(), seed, rep.overall_accuracy, rep._records, rep)


def run_ablation(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, seeds=(0,), text_layers=(1,),
                 image_layers=(2,), apply_mode: str = "per_key", norm_mode: str = "sum_to_one",
                 variants=VARIANTS, out_csv=None) -> AblationResult:
    """Train every variant for every seed and summarise by the median validation accuracy."""
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    splits = (encode_split(ds, "train"), encode_split(ds, "val"))
    rows, runs = [], {}
    for v in variants:
        integ = IntegrationConfig.preset(v, text_layers, image_layers, apply_mode=apply_mode, norm_mode=norm_mode)
        runs[v] = []
        for s in seeds:
            run = run_once(ds, model_cfg, integ, train_cfg, s, splits)
            log.info("ablation %s seed %d: %.4f", v, s, run.accuracy)
            runs[v].append(run)
        accs = [r.accuracy for r in runs[v]]
        rows.append(AblationRow(v, integ.label(), accs, float(np.median(accs))))
    if "none" in runs:
        base = next(r.median for r in rows if r.variant == "none")
        for r in rows:
            r.delta_vs_none = r.median - base
    result = AblationResult(rows, runs)
    if out_csv is not None:
        write_csv(out_csv, [r.as_csv() for r in rows])
    return result


@dataclass
class SweepRow:
    text_layers: tuple
    image_layers: tuple
    label: str
    accuracy: float | None
    error: str | None = None

    def as_csv(self) -> dict:
        return {"text_layers": ",".join(map(str, self.text_layers)) or "-",
                "image_layers": ",".join(map(str, self.image_layers)) or "-",
                "accuracy": "" if self.accuracy is None else f"{self.accuracy:.6f}",
                "error": self.error or ""}


def sweep_layers(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, combos=None, seed: int = 0,
                 apply_mode: str = "per_key", norm_mode: str = "sum_to_one", out_csv=None) -> list[SweepRow]:
    """One run per distinct (text layers, image layers) pair; invalid pairs become error rows."""
    combos = STUDIED_LAYER_COMBOS if combos is None else combos
    seen, rows = set(), []
    splits = None
    for t, i in combos:
        key = (tuple(sorted(set(t))), tuple(sorted(set(i))))
        if key in seen:
            continue
        seen.add(key)
        integ = IntegrationConfig(frozenset(key[0]), frozenset(key[1]), apply_mode, norm_mode)
        try:
            integ.validate(model_cfg)
        except ConfigError as exc:
            rows.append(SweepRow(key[0], key[1], integ.label(), None, str(exc)))
            continue
        splits = splits or (encode_split(ds, "train"), encode_split(ds, "val"))
        try:
            run = run_once(ds, model_cfg, integ, train_cfg, seed, splits)
        except HumattnError as exc:
            rows.append(SweepRow(key[0], key[1], integ.label(), None, str(exc)))
            continue
        rows.append(SweepRow(key[0], key[1], integ.label(), run.accuracy))
    if out_csv is not None:
        write_csv(out_csv, [r.as_csv() for r in rows])
    return rows


def _mean(values):
    return float(np.mean(values)) if values else None


def report_by_length(runs: dict[str, list[EvalRecord]], baseline: str = "none") -> list[dict]:
    """Accuracy per question length 1..14 for each labelled run, with deltas against ``baseline``."""
    if baseline not in runs:
        raise ConfigError(f"baseline {baseline!r} missing from runs {sorted(runs)}")
    out = []
    for n in range(1, MAX_TOKENS + 1):
        row = {"length": n}
        base = _mean([r.accuracy for r in runs[baseline] if r.length == n])
        row["count"] = sum(r.length == n for r in runs[baseline])
        row["absent"] = row["count"] == 0
        for label, recs in runs.items():
            acc = _mean([r.accuracy for r in recs if r.length == n])
            row[label] = acc
            if label != baseline:
                row[f"delta_{label}"] = None if acc is None or base is None else acc - base
        out.append(row)
    return out


def report_by_qtype(a: list[EvalRecord], b: list[EvalRecord] | None = None, label_a: str = "a",
                    label_b: str = "b") -> list[dict]:
    """Per question-type accuracy (12 bins plus overall) of one run, or of two runs over the same
    questions with the difference and a paired t-test per bin."""
    if b is not None and sorted(r.id for r in a) != sorted(r.id for r in b):
        raise ConfigError("runs were evaluated on different questions")
    by_id = {r.id: r for r in b} if b is not None else {}
    out = []
    for q in list(QTYPES) + ["overall"]:
        pa = [r for r in a if q == "overall" or r.qtype == q]
        acc_a = np.array([r.accuracy for r in pa])
        row = {"qtype": q, "size": len(pa), label_a: _mean(acc_a.tolist())}
        if b is not None:
            acc_b = np.array([by_id[r.id].accuracy for r in pa])
            row[label_b] = _mean(acc_b.tolist())
            row["delta"] = None if not len(pa) else row[label_b] - row[label_a]
            row["p_value"] = paired_ttest(acc_a, acc_b) if len(pa) >= 2 else None
        out.append(row)
    return out


def dump_attention(model: VQAModel, split: EncodedSplit, answers: list[str], integ: IntegrationConfig, path,
                   epoch: int | str, limit: int | None = None, text_source: str = "tsm",
                   append: bool = False) -> int:
    """Write one JSON line per question with reduction weights, priors, prediction and ground truth."""
    n = len(split) if limit is None else min(limit, len(split))
    dt = model.cfg.np_dtype
    with nc.no_grad():
        b = split.batch(np.arange(n), dt)
        res = run_batch(model, b, integ, text_source)
        tp, ip = priors_for(model, b, integ, text_source)
    pred = np.argmax(res.scores, axis=1)
    with open(path, "a" if append else "w") as fh:
        for k, s in enumerate(b.samples):
            nq = len(s.tokens)
            m = int(b.img_mask[k].sum())
            rec = {
                "epoch": epoch, "id": s.id, "question": s.question, "tokens": s.tokens,
                "integration": integ.label(),
                "text_weights": _round(res.text_weights.data[k, :nq]),
                "image_weights": _round(res.image_weights.data[k, :m]),
                "text_prior": None if tp is None else _round(tp.weights.data[k, :nq]),
                "image_prior": None if ip is None else _round(ip.weights.data[k, :m]),
                "prediction": answers[pred[k]], "answers": s.answers,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return n


def _round(a) -> list[float]:
    return [float(f"{float(v):.6g}") for v in np.asarray(a)]


def write_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if v is None else v for k, v in r.items()})
