"""
Where to inject the priors
==========================

Sweep the layer combinations studied for a six-layer model, then dump the
attention-reduction weights of one trained model for inspection.

The model here is tiny so the sweep finishes quickly; the numbers are only
meant to show the workflow.
"""

import json
import tempfile
from pathlib import Path

from humattn.data import DatasetSpec, generate_dataset, load_dataset
from humattn.harness import dump_attention, sweep_layers
from humattn.model import IntegrationConfig, ModelConfig, VQAModel
from humattn.training import TrainConfig, encode_split, train

tmp = Path(tempfile.mkdtemp())
generate_dataset(1, DatasetSpec(num_images=80, num_questions=600), tmp / "data")
ds = load_dataset(tmp / "data")
cfg = ModelConfig(d_model=16, heads=2, enc_layers=6, dec_layers=6, d_y=16, answers=len(ds.answers))
tc = TrainConfig(epochs=2, lr=1e-3, text_prior_source="oracle")

# %%
# Seven (text layers, image layers) pairs; each row is one training run.
rows = sweep_layers(ds, cfg, tc, norm_mode="mean_one", out_csv=tmp / "sweep.csv")
for r in rows:
    print(f"{r.label:34s} {r.accuracy:.3f}")
print((tmp / "sweep.csv").read_text())

# %%
# Attention dump: one JSON record per question with the pooled text and image
# weights next to the priors that shaped them.
integ = IntegrationConfig.preset("both", norm_mode="mean_one")
model = VQAModel(cfg, seed=0)
train(model, ds, integ, tc)
dump_attention(model, encode_split(ds, "val"), ds.answers, integ, tmp / "attn.jsonl", epoch="final",
               limit=3, text_source="oracle")
for line in (tmp / "attn.jsonl").read_text().splitlines():
    rec = json.loads(line)
    top = max(range(len(rec["image_weights"])), key=rec["image_weights"].__getitem__)
    print(rec["question"], "->", rec["prediction"], "| truth", rec["answers"][0],
          "| most attended cell", top, "| prior peak", rec["image_prior"].index(max(rec["image_prior"])))
