"""Command-line entry point (``humattn``).

Exit codes: 0 success, 2 invalid configuration or input, 3 data/file error,
4 numerical failure, 1 anything else raised by the package.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import DatasetSpec, generate_dataset, load_dataset
from .errors import ConfigError, DataError, HumattnError, NumericalError, ValidationError
from .harness import dump_attention, report_by_length, report_by_qtype, run_ablation, sweep_layers, write_csv
from .model import IntegrationConfig, ModelConfig, VQAModel, load_checkpoint
from .training import (
    TrainConfig,
    encode_split,
    evaluate,
    overall_accuracy,
    per_bin_accuracy,
    read_eval,
    train,
    write_eval,
)

log = logging.getLogger("humattn")

PRIOR_MODES = {"key": "per_key", "query": "per_query"}
PRIOR_NORMS = {"sum1": "sum_to_one", "mean1": "mean_one"}


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    unknown = set(cfg) - {"data", "model", "train", "integration"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    return cfg


def parse_layers(text: str | None) -> tuple[int, ...] | None:
    if text is None:
        return None
    text = text.strip()
    if text in ("", "-"):
        return ()
    out = []
    try:
        for part in text.split(","):
            if "-" in part:
                lo, hi = part.split("-")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError as exc:
        raise ConfigError(f"bad layer list {text!r}; use e.g. 1,3,5 or 1-6") from exc
    return tuple(out)


def integration_from(args, cfg: dict) -> IntegrationConfig:
    section = dict(cfg.get("integration", {}))
    text = parse_layers(args.text_layers)
    image = parse_layers(args.image_layers)
    text = text if text is not None else tuple(section.get("text_layers", (1,)))
    image = image if image is not None else tuple(section.get("image_layers", (2,)))
    apply_mode = PRIOR_MODES[args.prior_mode] if args.prior_mode else section.get("apply_mode", "per_key")
    norm_mode = PRIOR_NORMS[args.prior_norm] if args.prior_norm else section.get("norm_mode", "sum_to_one")
    name = args.integration or section.get("preset", "both")
    return IntegrationConfig.preset(name, text, image, apply_mode=apply_mode, norm_mode=norm_mode)


def model_config_for(ds, cfg: dict) -> ModelConfig:
    d = {"d_x": next(iter(ds.features.values())).shape[2],
         "d_word": len(next(iter(ds.embeddings.values()))), "answers": len(ds.answers)}
    d.update(cfg.get("model", {}))
    mc = ModelConfig.from_dict(d)
    mc.validate()
    return mc


def train_config_for(args, cfg: dict) -> TrainConfig:
    tc = TrainConfig.from_dict(cfg.get("train", {}))
    if args.seed is not None:
        tc.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        tc.epochs = args.epochs
    tc.validate()
    return tc


def cmd_gen_data(args, cfg):
    d = dict(cfg.get("data", {}))
    if args.informativeness is not None:
        d["prior_informativeness"] = args.informativeness
    if args.questions is not None:
        d["num_questions"] = args.questions
    spec = DatasetSpec.from_dict(d)
    manifest = generate_dataset(args.seed or 0, spec, args.out)
    print(f"wrote {manifest['num_train']} train / {manifest['num_val']} val questions to {args.out}")


def cmd_train(args, cfg):
    ds = load_dataset(args.data)
    mc = model_config_for(ds, cfg)
    tc = train_config_for(args, cfg)
    integ = integration_from(args, cfg)
    integ.validate(mc)
    model = VQAModel(mc, seed=tc.seed)
    rep = train(model, ds, integ, tc, out_dir=args.out)
    print(f"{integ.label()} best epoch {rep.best_epoch} val accuracy {rep.overall_accuracy:.4f} ({rep.status})")


def cmd_eval(args, cfg):
    model, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    integ = IntegrationConfig(**meta["integration"]) if "integration" in meta else integration_from(args, cfg)
    split = encode_split(ds, args.split)
    recs = evaluate(model, split, ds.answers, integ, meta.get("text_prior_source", "tsm"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_eval(out / "eval.jsonl", recs)
    summary = {"accuracy": overall_accuracy(recs), "per_bin": per_bin_accuracy(recs), "split": args.split,
               "integration": integ.to_dict()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{args.split} accuracy {summary['accuracy']:.4f} over {len(recs)} questions")


def cmd_ablate(args, cfg):
    ds = load_dataset(args.data)
    mc = model_config_for(ds, cfg)
    tc = train_config_for(args, cfg)
    integ = integration_from(args, cfg)
    seeds = args.seeds if args.seeds else [tc.seed]
    res = run_ablation(ds, mc, tc, seeds, tuple(sorted(integ.text_layers)) or (1,),
                       tuple(sorted(integ.image_layers)) or (2,), integ.apply_mode, integ.norm_mode,
                       out_csv=Path(args.out) / "ablation.csv")
    for r in res.rows:
        print(f"{r.variant:6s} median {r.median:.4f} ({r.delta_vs_none:+.4f} vs none)")


def cmd_sweep(args, cfg):
    ds = load_dataset(args.data)
    mc = model_config_for(ds, cfg)
    tc = train_config_for(args, cfg)
    integ = integration_from(args, cfg)
    combos = None
    if args.combo:
        combos = []
        for c in args.combo:
            t, _, i = c.partition("/")
            combos.append((parse_layers(t), parse_layers(i)))
    rows = sweep_layers(ds, mc, tc, combos, tc.seed, integ.apply_mode, integ.norm_mode,
                        out_csv=Path(args.out) / "sweep.csv")
    for r in rows:
        print(f"{r.label:28s} {'error: ' + r.error if r.error else f'{r.accuracy:.4f}'}")


def cmd_report(args, cfg):
    runs = {}
    for item in args.run:
        label, _, path = item.partition("=")
        if not path:
            raise ConfigError(f"--run expects label=path, got {item!r}")
        runs[label] = read_eval(path)
    out = Path(args.out)
    rows = report_by_length(runs, args.baseline)
    write_csv(out / "by_length.csv", rows)
    labels = [k for k in runs if k != args.baseline]
    other = runs[labels[-1]] if labels else None
    write_csv(out / "by_qtype.csv", report_by_qtype(runs[args.baseline], other, args.baseline,
                                                    labels[-1] if labels else "b"))
    print(f"wrote reports for {sorted(runs)} to {out}")


def cmd_dump(args, cfg):
    model, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    integ = IntegrationConfig(**meta["integration"]) if "integration" in meta else integration_from(args, cfg)
    split = encode_split(ds, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = dump_attention(model, split, ds.answers, integ, out / "attention.jsonl", args.epoch, args.limit,
                       meta.get("text_prior_source", "tsm"))
    print(f"dumped attention for {n} questions")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="humattn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON file with data/model/train/integration sections")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        sp.add_argument("--integration", choices=["none", "text", "image", "both"])
        sp.add_argument("--text-layers", help="e.g. 1 or 1,3,5 or 1-6")
        sp.add_argument("--image-layers")
        sp.add_argument("--prior-mode", choices=sorted(PRIOR_MODES))
        sp.add_argument("--prior-norm", choices=sorted(PRIOR_NORMS))

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(sp, data=False)
    sp.add_argument("--informativeness", type=float)
    sp.add_argument("--questions", type=int)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train one model")
    common(sp)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="val", choices=["train", "val"])
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="none/text/image/both over seeds")
    common(sp)
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep-layers", help="train over prior layer combinations")
    common(sp)
    sp.add_argument("--combo", action="append", help="TEXT/IMAGE layer lists, e.g. 1,3,5/2 (repeatable)")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="length and question-type breakdowns from eval.jsonl files")
    common(sp, data=False)
    sp.add_argument("--run", action="append", required=True, help="label=path/to/eval.jsonl (repeatable)")
    sp.add_argument("--baseline", default="none")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("dump-attn", help="write reduction weights and priors per question")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="val", choices=["train", "val"])
    sp.add_argument("--limit", type=int)
    sp.add_argument("--epoch", default="final")
    sp.set_defaults(func=cmd_dump)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return 2
    if isinstance(exc, DataError):
        return 3
    if isinstance(exc, NumericalError):
        return 4
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except HumattnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
