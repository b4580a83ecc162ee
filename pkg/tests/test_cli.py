from __future__ import annotations

import json

import pytest

from humattn.cli import main, parse_layers
from humattn.errors import ConfigError

CFG = {
    "data": {"num_images": 30, "num_questions": 160, "d_x": 12, "d_word": 8},
    "model": {"d_model": 16, "heads": 2, "enc_layers": 2, "dec_layers": 2, "d_y": 16, "prior_hidden": 8,
              "prior_heads": 2},
    "train": {"epochs": 1, "lr": 1e-3, "batch_size": 32},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.json").write_text(json.dumps(CFG))
    assert main(["gen-data", "--config", str(root / "cfg.json"), "--seed", "2", "--out", str(root / "d")]) == 0
    return root


def run(ws, *args):
    return main([args[0], "--config", str(ws / "cfg.json"), *args[1:]])


def test_parse_layers():
    assert parse_layers("1,3,5") == (1, 3, 5)
    assert parse_layers("1-3,6") == (1, 2, 3, 6)
    assert parse_layers("-") == ()
    with pytest.raises(ConfigError):
        parse_layers("a")


def test_train_eval_dump_report(workspace, capsys):
    ws = workspace
    d = str(ws / "d")
    assert run(ws, "train", "--data", d, "--out", str(ws / "both"), "--integration", "both",
               "--prior-mode", "query", "--prior-norm", "mean1") == 0
    meta_cfg = json.loads((ws / "both/report.json").read_text())["config"]["integration"]
    assert meta_cfg["apply_mode"] == "per_query" and meta_cfg["norm_mode"] == "mean_one"
    assert run(ws, "train", "--data", d, "--out", str(ws / "none"), "--integration", "none") == 0
    assert run(ws, "eval", "--data", d, "--checkpoint", str(ws / "both/checkpoint.mhan"), "--out",
               str(ws / "ev")) == 0
    # re-evaluating the saved checkpoint reproduces the training-time evaluation
    assert (ws / "ev/eval.jsonl").read_text() == (ws / "both/eval.jsonl").read_text()
    assert run(ws, "dump-attn", "--data", d, "--checkpoint", str(ws / "both/checkpoint.mhan"), "--out",
               str(ws / "att"), "--limit", "4") == 0
    assert len((ws / "att/attention.jsonl").read_text().splitlines()) == 4
    assert run(ws, "report", "--out", str(ws / "rep"), "--run", f"none={ws / 'none/eval.jsonl'}",
               "--run", f"both={ws / 'both/eval.jsonl'}") == 0
    assert (ws / "rep/by_length.csv").exists() and (ws / "rep/by_qtype.csv").exists()
    assert "accuracy" in capsys.readouterr().out


def test_ablate_and_sweep(workspace):
    ws = workspace
    d = str(ws / "d")
    assert run(ws, "ablate", "--data", d, "--out", str(ws / "ab"), "--seeds", "0") == 0
    assert len((ws / "ab/ablation.csv").read_text().splitlines()) == 5
    assert run(ws, "sweep-layers", "--data", d, "--out", str(ws / "sw"), "--combo", "1/2", "--combo", "1-6/2") == 0
    lines = (ws / "sw/sweep.csv").read_text().splitlines()
    assert len(lines) == 3 and "out of range" in lines[2]


def test_exit_codes(workspace, tmp_path, capsys):
    ws = workspace
    d = str(ws / "d")
    assert run(ws, "train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")) == 3
    assert run(ws, "train", "--data", d, "--out", str(tmp_path / "o"), "--text-layers", "7") == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "bad.json"), "--data", d, "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "keys.json").write_text(json.dumps({"model": {"d_model": 15, "heads": 2}}))
    assert main(["train", "--config", str(tmp_path / "keys.json"), "--data", d, "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "nan.json").write_text(json.dumps({**CFG, "train": {"epochs": 1, "lr": 1e30}}))
    assert main(["train", "--config", str(tmp_path / "nan.json"), "--data", d, "--out", str(tmp_path / "o")]) == 4
    assert "error:" in capsys.readouterr().err
