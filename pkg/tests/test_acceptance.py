"""Acceptance gate: one test per criterion, each reported as a PASS/FAIL line.

The summary lines are printed in the terminal summary of the pytest run
(hook in conftest.py).
"""

from __future__ import annotations

import itertools
import json
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from humattn import numcore as nc
from humattn.attention import AttentionPrior, MultiHeadConfig, SelfAttention
from humattn.cli import main as cli_main
from humattn.data import QTYPES, DatasetSpec, generate_dataset, load_dataset
from humattn.harness import STUDIED_LAYER_COMBOS, report_by_length, run_ablation
from humattn.metrics import vqa_accuracy
from humattn.model import (
    IntegrationConfig,
    ModelConfig,
    VQAModel,
    count_parameters,
    enumerate_parameters,
    load_checkpoint,
    save_checkpoint,
)
from humattn.numcore import Tensor
from humattn.saliency import GridGeometry, SaliencyMap, aggregate_to_grid, cell_sums
from humattn.training import TrainConfig, train

from conftest import gradcheck
from test_numcore import OP_CASES

RESULTS: dict[int, tuple[bool, str]] = {}

# desk-scale experiment settings
LEARN_SPEC = dict(num_images=600, num_questions=6000, rows=4, cols=6, prior_informativeness=1.0)
LEARN_MODEL = dict(d_model=64, heads=4, enc_layers=2, dec_layers=2, d_y=64)
LEARN_TRAIN = dict(epochs=12, lr=1e-3, batch_size=64, text_prior_source="oracle")
DIRECTION_SPEC = dict(num_images=450, num_questions=4500, rows=4, cols=6)
DIRECTION_MODEL = dict(d_model=64, heads=4, enc_layers=2, dec_layers=2, d_y=64)
DIRECTION_TRAIN = dict(epochs=12, lr=1e-3, batch_size=64, text_prior_source="oracle")
DIRECTION_SEEDS = (0, 1, 2, 3, 4)


@contextmanager
def criterion(n: int, name: str):
    detail = {"text": ""}
    try:
        yield detail
    except BaseException:
        RESULTS[n] = (False, f"{name} {detail['text']}".strip())
        raise
    RESULTS[n] = (True, f"{name} {detail['text']}".strip())


def model_inputs(rng, cfg, B=2, n=4, m=5):
    q = Tensor(rng.normal(size=(B, n, cfg.d_word)))
    x = Tensor(rng.normal(size=(B, m, cfg.d_x)))
    qm = np.ones((B, n), bool)
    qm[1, 2:] = False
    xm = np.ones((B, m), bool)
    xm[0, 3:] = False
    return q, qm, x, xm


def test_criterion_1_gradients():
    with criterion(1, "gradient suite") as d:
        t0 = time.perf_counter()
        worst = 0.0
        for name, fn in OP_CASES.items():
            for seed in range(3):
                rng = np.random.default_rng(seed)
                a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
                b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
                if name == "relu":
                    a.data[np.abs(a.data) < 1e-3] = 0.5
                worst = max(worst, gradcheck(lambda: fn(a, b), [a, b]))
        # lstm
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 12)) * 0.5, requires_grad=True)
        u = Tensor(rng.normal(size=(3, 12)) * 0.5, requires_grad=True)
        bias = Tensor(rng.normal(size=12) * 0.1, requires_grad=True)
        lmask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], bool)
        proj = rng.normal(size=(2, 4, 3))
        for reverse in (False, True):
            worst = max(worst, gradcheck(lambda: (nc.lstm(x, w, u, bias, mask=lmask, reverse=reverse) * proj).sum(), [x, w, u, bias]))
        # full toy model with both priors, including the text prior net
        cfg = ModelConfig(d_model=32, heads=4, enc_layers=1, dec_layers=1, d_x=6, d_y=8, d_word=5, answers=4,
                          prior_hidden=8, prior_heads=2, dtype="float64")
        model = VQAModel(cfg, seed=0)
        q, qm, xi, xm = model_inputs(rng, cfg)
        q.requires_grad = True
        ipw = rng.uniform(0.2, 1.0, size=xm.shape) * xm
        ip = AttentionPrior(Tensor(ipw / ipw.sum(1, keepdims=True)), mask=xm)
        integ = IntegrationConfig.preset("both", (1,), (1,))
        targets = rng.uniform(size=(2, 4))

        def loss():
            out = model(q, qm, xi, xm, model.text_prior(q, qm), ip, integ)
            return nc.bce_with_logits(out.logits, targets)

        params = [p for _, p in model.named_parameters()] + [q]
        sample = np.random.default_rng(1)
        worst = max(worst, gradcheck(loss, params, max_coords=6, rng=sample))
        elapsed = time.perf_counter() - t0
        d["text"] = f"max rel err {worst:.2e} in {elapsed:.1f}s"
        assert worst <= 1e-4
        assert elapsed < 300


def test_criterion_2_unit_prior_identity():
    with criterion(2, "unit-prior identity") as d:
        checked = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            heads = int(rng.choice([1, 2, 4]))
            dm = heads * int(rng.integers(1, 5))
            n = int(rng.integers(1, 8))
            B = int(rng.integers(1, 4))
            dtype = np.float64 if seed % 2 else np.float32
            block = SelfAttention(rng, MultiHeadConfig(dm, heads), dtype)
            x = Tensor(rng.normal(size=(B, n, dm)).astype(dtype))
            mask = np.ones((B, n), bool)
            mask[:, int(rng.integers(1, n + 1)):] = False
            base = block(x, mask).data
            for apply_mode in ("per_key", "per_query"):
                prior = AttentionPrior.uniform(mask, "mean_one", apply_mode, dtype)
                out = block(x, mask, prior).data
                assert np.array_equal(out, base), (seed, apply_mode)
                checked += 1
        d["text"] = f"{checked} configs bitwise equal"


def enumerated_accuracy(pred, answers):
    total = Fraction(0)
    for subset in itertools.combinations(range(10), 9):
        total += min(Fraction(sum(answers[i] == pred for i in subset), 3), 1)
    return float(total / 10)


def test_criterion_3_metric_oracle():
    with criterion(3, "vqa accuracy oracle") as d:
        for k in range(11):
            answers = ["yes"] * k + ["no"] * (10 - k)
            assert vqa_accuracy("yes", answers) == enumerated_accuracy("yes", answers)
        three = vqa_accuracy("a", ["a"] * 3 + ["b"] * 7)
        assert round(three, 4) == 0.9
        d["text"] = f"match counts 0-10 exact, 3/10 -> {three:.4f}"


def naive_grid(values, rows, cols):
    H, W = values.shape
    out = np.zeros(rows * cols)
    for y in range(H):
        for x in range(W):
            out[(y * rows // H) * cols + x * cols // W] += values[y, x]
    return out


def test_criterion_4_aggregation_oracle():
    with criterion(4, "aggregation oracle") as d:
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            H, W = int(rng.integers(8, 80)), int(rng.integers(8, 120))
            rows, cols = int(rng.integers(1, 8)), int(rng.integers(1, 10))
            rows, cols = min(rows, H), min(cols, W)
            values = rng.random((H, W)).astype(np.float32).astype(np.float64)
            smap = SaliencyMap(values, W / H)
            sums = cell_sums(values, GridGeometry(rows, cols))
            naive = naive_grid(values, rows, cols)
            assert sums.sum() == values.sum()  # exact: float32 inputs summed in float64
            prior = aggregate_to_grid(smap, GridGeometry(rows, cols))
            ref = naive / naive.sum()
            worst = max(worst, float(np.max(np.abs(prior.weights.data - ref))))
            assert np.max(np.abs(sums - naive)) <= 1e-12
        d["text"] = f"50 maps, max abs err {worst:.1e}"
        assert worst <= 1e-12


@pytest.fixture(scope="module")
def learn_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("learn")
    generate_dataset(0, DatasetSpec(**LEARN_SPEC), root)
    return load_dataset(root)


def test_criterion_5_learnability(learn_data):
    with criterion(5, "desk-scale learnability") as d:
        ds = learn_data
        assert len(ds.train) + len(ds.val) >= 5000
        cfg = ModelConfig(d_x=ds.features[0].shape[2], d_word=len(next(iter(ds.embeddings.values()))),
                          answers=len(ds.answers), **LEARN_MODEL)
        t0 = time.perf_counter()
        rep = train(VQAModel(cfg, seed=0), ds, IntegrationConfig.preset("both", norm_mode="mean_one"),
                    TrainConfig(**LEARN_TRAIN))
        elapsed = time.perf_counter() - t0
        d["text"] = f"accuracy {rep.overall_accuracy:.4f} after {len(rep.epoch_loss)} epochs in {elapsed:.0f}s"
        assert rep.overall_accuracy >= 0.95
        assert len(rep.epoch_loss) <= 12 and elapsed < 900


def direction_ablation(tmp_path_factory, informativeness):
    root = tmp_path_factory.mktemp(f"dir{informativeness}")
    generate_dataset(0, DatasetSpec(prior_informativeness=informativeness, **DIRECTION_SPEC), root)
    ds = load_dataset(root)
    cfg = ModelConfig(d_x=ds.features[0].shape[2], d_word=len(next(iter(ds.embeddings.values()))),
                      answers=len(ds.answers), **DIRECTION_MODEL)
    return run_ablation(ds, cfg, TrainConfig(**DIRECTION_TRAIN), DIRECTION_SEEDS, norm_mode="mean_one")


def test_criterion_6_direction(tmp_path_factory):
    with criterion(6, "desk-scale direction") as d:
        informative = direction_ablation(tmp_path_factory, 1.0)
        control = direction_ablation(tmp_path_factory, 0.0)
        med = {r.variant: 100 * r.median for r in informative.rows}
        ctl = {r.variant: 100 * r.median for r in control.rows}
        spread = max(ctl.values()) - min(ctl.values())
        d["text"] = ("medians " + " ".join(f"{k}={v:.2f}" for k, v in med.items())
                     + f"; control spread {spread:.2f}")
        assert med["both"] >= med["none"] + 2.0
        assert med["both"] >= med["text"] and med["both"] >= med["image"]
        assert spread <= 1.0


def test_criterion_7_harness_structure(tmp_path):
    with criterion(7, "harness structure") as d:
        cfg = {"data": {"num_images": 30, "num_questions": 160, "d_x": 12, "d_word": 8},
               "model": {"d_model": 8, "heads": 2, "enc_layers": 6, "dec_layers": 6, "d_y": 8,
                         "prior_hidden": 8, "prior_heads": 2},
               "train": {"epochs": 1, "lr": 1e-3, "batch_size": 64, "text_prior_source": "oracle"}}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        c = ["--config", str(tmp_path / "cfg.json")]
        data = str(tmp_path / "data")
        assert cli_main(["gen-data", *c, "--out", data]) == 0
        assert cli_main(["sweep-layers", *c, "--data", data, "--out", str(tmp_path / "sweep")]) == 0
        lines = (tmp_path / "sweep/sweep.csv").read_text().splitlines()
        assert len(lines) == 1 + len(STUDIED_LAYER_COMBOS) == 8
        assert all(line.split(",")[-1] == "" for line in lines[1:])
        for variant in ("none", "both"):
            assert cli_main(["train", *c, "--data", data, "--out", str(tmp_path / variant),
                             "--integration", variant]) == 0
        assert cli_main(["report", *c, "--out", str(tmp_path / "rep"), "--run",
                         f"none={tmp_path / 'none/eval.jsonl'}", "--run",
                         f"both={tmp_path / 'both/eval.jsonl'}"]) == 0
        qrows = (tmp_path / "rep/by_qtype.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in qrows[1:]] == list(QTYPES) + ["overall"]
        lrows = (tmp_path / "rep/by_length.csv").read_text().splitlines()
        assert [int(r.split(",")[0]) for r in lrows[1:]] == list(range(1, 15))
        assert len(report_by_length({"none": []})) == 14
        assert cli_main(["dump-attn", *c, "--data", data, "--checkpoint", str(tmp_path / "both/checkpoint.mhan"),
                         "--out", str(tmp_path / "att")]) == 0
        recs = [json.loads(x) for x in (tmp_path / "att/attention.jsonl").read_text().splitlines()]
        assert recs and all(len(r["text_weights"]) == len(r["tokens"]) for r in recs)
        d["text"] = f"{len(lines) - 1} sweep rows, {len(qrows) - 1} qtype rows, {len(lrows) - 1} length bins, " \
                    f"{len(recs)} attention records"


def test_criterion_8_parameter_accounting():
    with criterion(8, "parameter accounting") as d:
        rng = np.random.default_rng(8)
        for _ in range(20):
            heads = int(rng.choice([1, 2, 4]))
            cfg = ModelConfig(d_model=heads * int(rng.integers(1, 6)), heads=heads,
                              ffn_hidden=int(rng.integers(1, 24)) if rng.random() < 0.5 else None,
                              enc_layers=int(rng.integers(1, 4)), dec_layers=int(rng.integers(1, 4)),
                              d_x=int(rng.integers(1, 10)), d_y=int(rng.integers(1, 10)),
                              d_word=int(rng.integers(1, 10)), answers=int(rng.integers(1, 10)),
                              fused_dim=int(rng.integers(1, 16)) if rng.random() < 0.5 else None,
                              use_lstm=bool(rng.random() < 0.5), prior_hidden=4 * int(rng.integers(1, 4)),
                              prior_heads=4)
            assert count_parameters(cfg) == enumerate_parameters(VQAModel(cfg))
        n = count_parameters(ModelConfig.full_scale())
        d["text"] = f"20 configs exact; full-scale count {n:,}"
        assert 50_000_000 <= n <= 66_000_000


def test_criterion_9_determinism(tmp_path):
    with criterion(9, "determinism") as d:
        gen = DatasetSpec(num_images=40, num_questions=300, d_x=12, d_word=8)
        generate_dataset(5, gen, tmp_path / "d")
        ds = load_dataset(tmp_path / "d")
        cfg = ModelConfig(d_model=16, heads=2, d_x=12, d_y=16, d_word=8, answers=len(ds.answers),
                          prior_hidden=8, prior_heads=2)
        tc = TrainConfig(epochs=2, lr=1e-3, batch_size=32, seed=4)
        integ = IntegrationConfig.preset("both", norm_mode="mean_one")
        reports = []
        for name in ("a", "b"):
            rep = train(VQAModel(cfg, seed=4), ds, integ, tc, out_dir=tmp_path / name)
            reports.append(rep.to_json(include_timing=False))
        assert reports[0] == reports[1]
        for name in ("a", "b"):
            on_disk = json.loads((tmp_path / name / "report.json").read_text())
            on_disk.pop("timing")
            assert json.dumps(on_disk, sort_keys=True, indent=2) + "\n" == reports[0]
        assert (tmp_path / "a/checkpoint.mhan").read_bytes() == (tmp_path / "b/checkpoint.mhan").read_bytes()
        model, _ = load_checkpoint(tmp_path / "a/checkpoint.mhan")
        save_checkpoint(tmp_path / "again.mhan", model, {"integration": integ.to_dict(),
                                                          "text_prior_source": tc.text_prior_source})
        assert (tmp_path / "again.mhan").read_bytes() == (tmp_path / "a/checkpoint.mhan").read_bytes()
        d["text"] = "reports byte-identical, checkpoint round trip bitwise"
