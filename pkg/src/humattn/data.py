"""Synthetic grid-world VQA data, its file formats, tokenisation and question-type bins.

Each image is a ``rows x cols`` grid whose cells hold at most one object
(shape, colour, size). Grid features are one-hot attribute/position codes
pushed through a fixed random projection plus noise. Questions come from
templates, each answered by ten simulated annotators. Oracle priors put mass
on the referenced cells / discriminative tokens and are blended with a
uniform distribution according to ``prior_informativeness``.

Files written by :func:`generate_dataset`::

    manifest.json      generation settings and counts
    train.jsonl        {id, q, answers[10], image, qtype} per line
    val.jsonl
    truth.jsonl        {id, ref_cells, gaze_cells, key_tokens, answer, template}
    features.mhfg      grid features per image
    text_priors.mhpr   oracle token priors per question
    image_priors.mhpr  oracle cell priors per question
    embeddings.tsv     token<TAB>v1 v2 ...
    answers.txt        answer vocabulary, one per line
"""

from __future__ import annotations

import json
import logging
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError, FormatError, GenerationError, ValidationError
from .numcore import Tensor

log = logging.getLogger(__name__)

MAX_TOKENS = 14
NUM_ANSWERS = 10
MAX_CELLS = 608
FEATURE_MAGIC = b"MHFG"
PRIOR_MAGIC = b"MHPR"

SHAPES = ("circle", "square", "triangle", "star", "cross")
COLORS = ("red", "green", "blue", "yellow", "purple", "orange")
SIZES = ("small", "big")

QTYPES = (
    "reading",
    "activity recognition",
    "positional reasoning",
    "object recognition",
    "counting",
    "object presence",
    "scene recognition",
    "sentiment understanding",
    "color",
    "attribute",
    "utility affordance",
    "sport recognition",
)

# first match wins; anything unmatched is object recognition
QTYPE_PATTERNS = [
    ("reading", r"\bwhat (does|do) (the|this|that)? ?\w+ (say|read)\b|\bwhat is written\b|"
                r"\bwhat (number|letter|word|brand|time)\b|\bread\b"),
    ("counting", r"\bhow many\b|\bnumber of\b"),
    ("object presence", r"\b(is|are) there\b|\bdo you see\b"),
    ("color", r"\b(what|which) colou?rs?\b|\bcolou?r of\b"),
    ("scene recognition", r"\bwhere (is|was) this\b|\bwhat (room|place)\b|\b(indoors|outdoors|weather)\b"),
    ("activity recognition", r"\bdoing\b"),
    ("utility affordance", r"\bused for\b|\bfor what\b|\bpurpose\b"),
    ("sport recognition", r"\b(sport|sports|playing)\b"),
    ("sentiment understanding", r"\b(happy|sad|feel|feeling|mood|emotion|angry|smiling)\b"),
    ("positional reasoning", r"\b(left|right|above|below|under|behind|in front of|next to|where)\b"),
    ("attribute", r"\b(what|which) (size|material|shape|pattern)\b|\bhow (big|large|small|tall)\b|\bmade of\b"),
    ("object recognition", r"\bwhat (is|are)\b|\bwhat kind\b"),
]
_COMPILED = [(name, re.compile(p)) for name, p in QTYPE_PATTERNS]

FILLERS = ("", "", "", "tell me", "in this picture", "can you tell me", "looking at the image",
           "please say", "in the grid shown here", "quickly now", "for this image please tell me")


def classify_question_type(text: str) -> str:
    t = " ".join(tokenize(text))
    for name, pat in _COMPILED:
        if pat.search(t):
            return name
    return "object recognition"


_WORD = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def answer_vocab(max_objects: int) -> list[str]:
    return list(COLORS) + list(SHAPES) + [str(i) for i in range(max_objects + 1)] + \
        ["yes", "no", "left", "right"] + list(SIZES)


def normalize_answer(a: str) -> str:
    return a.strip().lower()


# dataset settings

@dataclass
class DatasetSpec:
    num_images: int = 600
    rows: int = 4
    cols: int = 6
    num_questions: int = 6000
    prior_informativeness: float = 1.0
    objects: tuple[int, int] = (3, 6)
    agreement: tuple[float, float] = (0.8, 1.0)
    d_x: int = 48
    d_word: int = 32
    feature_noise: float = 0.05
    filler_prob: float = 0.5
    val_fraction: float = 0.2
    templates: dict = field(default_factory=lambda: dict(TEMPLATE_WEIGHTS))

    def validate(self) -> None:
        problems = []
        for name in ("num_images", "rows", "cols", "num_questions", "d_x", "d_word"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if not 0.0 <= self.prior_informativeness <= 1.0:
            problems.append("prior_informativeness must lie in [0, 1]")
        lo, hi = self.objects
        if not 1 <= lo <= hi <= self.rows * self.cols:
            problems.append(f"objects range {self.objects} invalid for a {self.rows}x{self.cols} grid")
        if not 0.0 < self.agreement[0] <= self.agreement[1] <= 1.0:
            problems.append("agreement must satisfy 0 < lo <= hi <= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            problems.append("val_fraction must lie in [0, 1)")
        unknown = set(self.templates) - set(TEMPLATES)
        if unknown:
            problems.append(f"unknown templates {sorted(unknown)}")
        if self.rows * self.cols > MAX_CELLS:
            problems.append(f"grid has more than {MAX_CELLS} cells")
        if problems:
            raise ConfigError("; ".join(problems))
        for name, weight in self.templates.items():
            if weight > 0:
                TEMPLATES[name].check(self)

    @classmethod
    def from_dict(cls, d: dict) -> DatasetSpec:
        d = dict(d)
        for k in ("objects", "agreement"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Obj:
    cell: int
    shape: str
    color: str
    size: str


@dataclass
class Scene:
    image_id: int
    rows: int
    cols: int
    objects: list[Obj]

    def unique(self, attr: str) -> list[Obj]:
        counts: dict[str, int] = {}
        for o in self.objects:
            counts[getattr(o, attr)] = counts.get(getattr(o, attr), 0) + 1
        return [o for o in self.objects if counts[getattr(o, attr)] == 1]


# templates

@dataclass
class Draft:
    text: str
    answer: str
    qtype: str
    ref_cells: list[int]
    key_words: list[str]
    # cells a viewer looks at; defaults to the referenced cells
    gaze_cells: list[int] | None = None

    @property
    def prior_cells(self) -> list[int]:
        return self.ref_cells if self.gaze_cells is None else self.gaze_cells


class Template:
    qtype = ""
    answers: tuple[str, ...] = ()

    def check(self, spec: DatasetSpec) -> None:
        pass

    def draft(self, scene: Scene, rng: np.random.Generator) -> Draft | None:
        raise NotImplementedError


class ColorOfShape(Template):
    qtype = "color"
    answers = COLORS

    def draft(self, scene, rng):
        cands = scene.unique("shape")
        if not cands:
            return None
        o = cands[rng.integers(len(cands))]
        return Draft(f"what color is the {o.shape}", o.color, self.qtype, [o.cell], ["color", o.shape])


class ObjectOfColor(Template):
    qtype = "object recognition"
    answers = SHAPES

    def draft(self, scene, rng):
        cands = scene.unique("color")
        if not cands:
            return None
        o = cands[rng.integers(len(cands))]
        return Draft(f"what is the {o.color} object", o.shape, self.qtype, [o.cell], ["what", o.color])


class CountColor(Template):
    qtype = "counting"

    def check(self, spec):
        if spec.objects[1] < 2:
            raise GenerationError("template 'count' needs at least 2 objects per image to be meaningful")

    def draft(self, scene, rng):
        color = COLORS[rng.integers(len(COLORS))] if rng.random() < 0.3 else \
            scene.objects[rng.integers(len(scene.objects))].color
        cells = [o.cell for o in scene.objects if o.color == color]
        return Draft(f"how many {color} shapes are there", str(len(cells)), self.qtype, cells,
                     ["how", "many", color])


class Presence(Template):
    qtype = "object presence"

    def draft(self, scene, rng):
        present = {(o.color, o.shape): o.cell for o in scene.objects}
        if rng.random() < 0.5:
            o = scene.objects[rng.integers(len(scene.objects))]
            color, shape, ans, cells = o.color, o.shape, "yes", [o.cell]
        else:
            absent = [(c, s) for c in COLORS for s in SHAPES if (c, s) not in present]
            color, shape = absent[rng.integers(len(absent))]
            ans = "no"
            # near misses: same shape, different colour
            cells = [o.cell for o in scene.objects if o.shape == shape]
        return Draft(f"is there a {color} {shape}", ans, self.qtype, cells, [color, shape])


class LeftRight(Template):
    qtype = "positional reasoning"

    def check(self, spec):
        if spec.cols < 2:
            raise GenerationError("template 'left_right' needs at least 2 grid columns")

    def draft(self, scene, rng):
        cands = [o for o in scene.unique("shape") if scene.cols % 2 == 0 or o.cell % scene.cols != scene.cols // 2]
        if not cands:
            return None
        o = cands[rng.integers(len(cands))]
        side = "left" if o.cell % scene.cols < scene.cols / 2 else "right"
        return Draft(f"is the {o.shape} on the left or the right", side, self.qtype, [o.cell], [o.shape, "left", "right"])


class SizeOfShape(Template):
    qtype = "attribute"
    answers = SIZES

    def draft(self, scene, rng):
        cands = scene.unique("shape")
        if not cands:
            return None
        o = cands[rng.integers(len(cands))]
        return Draft(f"what size is the {o.shape}", o.size, self.qtype, [o.cell], ["size", o.shape])


class ColorOfThis(Template):
    """Deictic question; only the saliency of the referenced object disambiguates it."""

    qtype = "color"
    answers = COLORS

    def check(self, spec):
        if spec.objects[1] < 1:
            raise GenerationError("template 'color_this' needs objects")

    def draft(self, scene, rng):
        o = scene.objects[rng.integers(len(scene.objects))]
        return Draft("what color is this", o.color, self.qtype, [o.cell], ["color", "this"])


class ColorOfEither(Template):
    """Names two objects but asks about one: only the reader's emphasis says which.

    A viewer looks at both named objects, so the image prior narrows the
    choice to two cells without resolving it.
    """

    qtype = "color"
    answers = COLORS

    def draft(self, scene, rng):
        cands = [o for o in scene.unique("shape")]
        if len(cands) < 2:
            return None
        i, j = rng.choice(len(cands), size=2, replace=False)
        target, other = cands[i], cands[j]
        first, second = (target, other) if rng.random() < 0.5 else (other, target)
        return Draft(f"what color is the {first.shape} or the {second.shape}", target.color, self.qtype,
                     [target.cell], [target.shape], gaze_cells=[target.cell, other.cell])


class WhatIsThis(Template):
    qtype = "object recognition"
    answers = SHAPES

    def draft(self, scene, rng):
        o = scene.objects[rng.integers(len(scene.objects))]
        return Draft("what is this", o.shape, self.qtype, [o.cell], ["what", "this"])


TEMPLATES: dict[str, Template] = {
    "color": ColorOfShape(),
    "object": ObjectOfColor(),
    "count": CountColor(),
    "presence": Presence(),
    "left_right": LeftRight(),
    "size": SizeOfShape(),
    "color_this": ColorOfThis(),
    "what_this": WhatIsThis(),
    "color_either": ColorOfEither(),
}
TEMPLATE_WEIGHTS = {"color": 1.0, "object": 1.0, "count": 0.6, "presence": 1.0, "left_right": 1.0,
                    "size": 1.0, "color_this": 1.2, "what_this": 1.2, "color_either": 1.2}


# generation

def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def make_scene(seed: int, spec: DatasetSpec, image_id: int) -> Scene:
    rng = _rng(seed, 0, image_id)
    m = spec.rows * spec.cols
    k = int(rng.integers(spec.objects[0], spec.objects[1] + 1))
    cells = np.sort(rng.choice(m, size=k, replace=False))
    objs = [Obj(int(c), SHAPES[rng.integers(len(SHAPES))], COLORS[rng.integers(len(COLORS))],
                SIZES[rng.integers(len(SIZES))]) for c in cells]
    return Scene(image_id, spec.rows, spec.cols, objs)


def feature_projection(seed: int, spec: DatasetSpec) -> np.ndarray:
    width = len(SHAPES) + 1 + len(COLORS) + len(SIZES) + spec.rows + spec.cols
    return _rng(seed, 2).normal(size=(width, spec.d_x)) / np.sqrt(4.0)


def scene_features(scene: Scene, proj: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    m = scene.rows * scene.cols
    width = proj.shape[0]
    onehot = np.zeros((m, width))
    onehot[:, len(SHAPES)] = 1.0  # empty cell
    base = len(SHAPES) + 1
    for o in scene.objects:
        onehot[o.cell, len(SHAPES)] = 0.0
        onehot[o.cell, SHAPES.index(o.shape)] = 1.0
        onehot[o.cell, base + COLORS.index(o.color)] = 1.0
        onehot[o.cell, base + len(COLORS) + SIZES.index(o.size)] = 1.0
    pos = base + len(COLORS) + len(SIZES)
    r, c = np.divmod(np.arange(m), scene.cols)
    onehot[np.arange(m), pos + r] = 1.0
    onehot[np.arange(m), pos + scene.rows + c] = 1.0
    feats = onehot @ proj + noise * rng.normal(size=(m, proj.shape[1]))
    return feats.astype(np.float32)


def blend_prior(n: int, ref: list[int], informativeness: float) -> np.ndarray:
    uniform = np.full(n, 1.0 / n)
    if not ref or informativeness == 0.0:
        return uniform.astype(np.float32)
    focus = np.zeros(n)
    focus[sorted(set(ref))] = 1.0 / len(set(ref))
    return (informativeness * focus + (1.0 - informativeness) * uniform).astype(np.float32)


def _annotate(answer: str, group: tuple[str, ...], p: float, rng: np.random.Generator) -> list[str]:
    others = [a for a in group if a != answer]
    out = []
    for _ in range(NUM_ANSWERS):
        if rng.random() < p or not others:
            out.append(answer)
        else:
            out.append(others[rng.integers(len(others))])
    return out


def _answer_group(template: Template, spec: DatasetSpec, answer: str) -> tuple[str, ...]:
    if template.answers:
        return template.answers
    if answer in ("yes", "no"):
        return ("yes", "no")
    if answer in ("left", "right"):
        return ("left", "right")
    return tuple(str(i) for i in range(spec.objects[1] + 1))


def generate_dataset(seed: int, spec: DatasetSpec, out_dir) -> dict:
    """Write a full dataset to ``out_dir``; the bytes depend only on ``(seed, spec)``."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    proj = feature_projection(seed, spec)
    scenes = [make_scene(seed, spec, i) for i in range(spec.num_images)]
    feats = [scene_features(s, proj, spec.feature_noise, _rng(seed, 4, s.image_id)) for s in scenes]

    names = [n for n, w in spec.templates.items() if w > 0]
    weights = np.array([spec.templates[n] for n in names], dtype=float)
    weights /= weights.sum()
    records, truth, text_priors, image_priors = [], [], [], []
    mismatches = 0
    m = spec.rows * spec.cols
    for qid in range(spec.num_questions):
        rng = _rng(seed, 1, qid)
        name = names[rng.choice(len(names), p=weights)]
        tmpl = TEMPLATES[name]
        start = int(rng.integers(spec.num_images))
        draft = None
        for k in range(spec.num_images):
            scene = scenes[(start + k) % spec.num_images]
            draft = tmpl.draft(scene, rng)
            if draft is not None:
                break
        if draft is None:
            raise GenerationError(f"template {name!r} cannot be satisfied by any generated image")
        text = draft.text
        if rng.random() < spec.filler_prob:
            filler = FILLERS[rng.integers(len(FILLERS))]
            text = f"{filler} {text}".strip()
        tokens = tokenize(text)[:MAX_TOKENS]
        if classify_question_type(text) != draft.qtype:
            mismatches += 1
            log.warning("question %d %r classified as %r, generated as %r", qid, text,
                        classify_question_type(text), draft.qtype)
        offset = len(tokens) - len(tokenize(draft.text))
        key_tokens = [offset + i for i, t in enumerate(tokenize(draft.text)) if t in draft.key_words]
        key_tokens = [i for i in key_tokens if 0 <= i < len(tokens)]
        p = float(rng.uniform(*spec.agreement))
        answers = _annotate(draft.answer, _answer_group(tmpl, spec, draft.answer), p, rng)
        records.append({"id": qid, "q": text, "answers": answers, "image": scene.image_id, "qtype": draft.qtype})
        truth.append({"id": qid, "ref_cells": sorted(set(draft.ref_cells)),
                      "gaze_cells": sorted(set(draft.prior_cells)), "key_tokens": key_tokens,
                      "answer": draft.answer, "template": name})
        text_priors.append((qid, 1, len(tokens), blend_prior(len(tokens), key_tokens, spec.prior_informativeness)))
        image_priors.append((qid, spec.rows, spec.cols, blend_prior(m, draft.prior_cells, spec.prior_informativeness)))

    # split by image so no image appears in both splits
    n_val_images = int(round(spec.num_images * spec.val_fraction))
    val_images = set(range(spec.num_images - n_val_images, spec.num_images))
    train = [r for r in records if r["image"] not in val_images]
    val = [r for r in records if r["image"] in val_images]
    write_jsonl(out / "train.jsonl", train)
    write_jsonl(out / "val.jsonl", val)
    write_jsonl(out / "truth.jsonl", truth)
    write_features(out / "features.mhfg", [(s.image_id, s.rows, s.cols, f) for s, f in zip(scenes, feats)])
    write_priors(out / "text_priors.mhpr", text_priors)
    write_priors(out / "image_priors.mhpr", image_priors)
    vocab = sorted({t for r in records for t in tokenize(r["q"])} | _template_words())
    emb = _rng(seed, 3).normal(size=(len(vocab), spec.d_word)).astype(np.float32)
    write_embeddings(out / "embeddings.tsv", dict(zip(vocab, emb)))
    (out / "answers.txt").write_text("\n".join(answer_vocab(spec.objects[1])) + "\n")
    manifest = {"seed": seed, "spec": asdict(spec), "num_train": len(train), "num_val": len(val),
                "classifier_mismatches": mismatches}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _template_words() -> set[str]:
    words = set(SHAPES) | set(COLORS) | set(SIZES)
    for f in FILLERS:
        words |= set(tokenize(f))
    return words


# file formats

def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def _write_blocks(path, magic: bytes, items) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(items)))
        for ident, rows, cols, data in items:
            data = np.asarray(data, dtype="<f4")
            depth = data.size // (rows * cols) if rows * cols else 0
            fh.write(struct.pack("<IIII", ident, rows, cols, depth))
            fh.write(data.tobytes())


def _read_blocks(path, magic: bytes) -> dict[int, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", raw, 4)
    pos, out = 8, {}
    for k in range(count):
        if pos + 16 > len(raw):
            raise FormatError(f"{path}: truncated at record {k}")
        ident, rows, cols, depth = struct.unpack_from("<IIII", raw, pos)
        pos += 16
        nbytes = 4 * rows * cols * depth
        if pos + nbytes > len(raw):
            raise FormatError(f"{path}: truncated payload at record {k}")
        arr = np.frombuffer(raw, dtype="<f4", count=rows * cols * depth, offset=pos)
        out[ident] = arr.reshape(rows, cols, depth).astype(np.float32)
        pos += nbytes
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def write_features(path, items) -> None:
    """``items``: (image id, rows, cols, [rows*cols, d_x] array)."""
    _write_blocks(path, FEATURE_MAGIC, items)


def read_features(path) -> dict[int, np.ndarray]:
    """Image id -> ``[rows, cols, d_x]`` float32 array."""
    return _read_blocks(path, FEATURE_MAGIC)


def write_priors(path, items) -> None:
    _write_blocks(path, PRIOR_MAGIC, items)


def read_priors(path) -> dict[int, np.ndarray]:
    return {k: v.reshape(-1) for k, v in _read_blocks(path, PRIOR_MAGIC).items()}


def write_embeddings(path, table: dict[str, np.ndarray]) -> None:
    with open(path, "w") as fh:
        for tok, vec in table.items():
            fh.write(tok + "\t" + " ".join(f"{float(v):.9g}" for v in np.asarray(vec, dtype=np.float32)) + "\n")


def read_embeddings(path) -> dict[str, np.ndarray]:
    table = {}
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                tok, vals = line.split("\t")
                table[tok] = np.array([float(v) for v in vals.split()], dtype=np.float32)
            except ValueError as exc:
                raise FormatError(f"{path}: malformed embedding line {i}") from exc
    widths = {v.size for v in table.values()}
    if len(widths) > 1:
        raise FormatError(f"{path}: inconsistent embedding widths {sorted(widths)}")
    return table


def tokenize_and_embed(text: str, table: dict[str, np.ndarray], max_len: int = MAX_TOKENS,
                       pad: bool = False, dtype=np.float64) -> tuple[Tensor, np.ndarray]:
    """Embed the first ``max_len`` words; OOV words get zero vectors but stay valid."""
    tokens = tokenize(text)[:max_len]
    if not tokens:
        raise ValidationError(f"question {text!r} has no tokens")
    d = len(next(iter(table.values())))
    n = max_len if pad else len(tokens)
    out = np.zeros((n, d), dtype=dtype)
    for i, t in enumerate(tokens):
        if t in table:
            out[i] = table[t]
    mask = np.zeros(n, dtype=bool)
    mask[:len(tokens)] = True
    return Tensor(out), mask


# loading

@dataclass
class VqaSample:
    id: int
    question: str
    answers: list[str]
    image: int
    qtype: str
    tokens: list[str] = field(default_factory=list)
    text_prior: np.ndarray | None = None
    image_prior: np.ndarray | None = None

    def validate(self) -> None:
        if len(self.answers) != NUM_ANSWERS:
            raise ValidationError(f"sample {self.id}: expected {NUM_ANSWERS} answers, got {len(self.answers)}")
        if not 1 <= len(self.tokens) <= MAX_TOKENS:
            raise ValidationError(f"sample {self.id}: {len(self.tokens)} tokens outside [1, {MAX_TOKENS}]")
        if self.qtype not in QTYPES:
            raise ValidationError(f"sample {self.id}: unknown qtype {self.qtype!r}")


def iter_questions(path) -> Iterator[VqaSample]:
    with open(path) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                s = VqaSample(int(r["id"]), str(r["q"]), [str(a) for a in r["answers"]], int(r["image"]),
                              str(r["qtype"]))
                s.tokens = tokenize(s.question)[:MAX_TOKENS]
                s.validate()
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: malformed record {i}: {exc}") from exc
            yield s


@dataclass
class Dataset:
    root: Path
    train: list[VqaSample]
    val: list[VqaSample]
    features: dict[int, np.ndarray]
    embeddings: dict[str, np.ndarray]
    answers: list[str]
    manifest: dict

    @property
    def answer_index(self) -> dict[str, int]:
        return {a: i for i, a in enumerate(self.answers)}

    def split(self, name: str) -> list[VqaSample]:
        return {"train": self.train, "val": self.val}[name]


def load_dataset(root, full_scale: bool = False) -> Dataset:
    root = Path(root)
    for name in ("train.jsonl", "val.jsonl", "features.mhfg", "embeddings.tsv", "answers.txt"):
        if not (root / name).exists():
            raise DataError(f"{root}: missing {name}")
    features = read_features(root / "features.mhfg")
    lo = 192 if full_scale else 1
    for ident, f in features.items():
        m = f.shape[0] * f.shape[1]
        if not lo <= m <= MAX_CELLS:
            raise DataError(f"image {ident}: {m} grid cells outside [{lo}, {MAX_CELLS}]")
    tp = read_priors(root / "text_priors.mhpr") if (root / "text_priors.mhpr").exists() else {}
    ip = read_priors(root / "image_priors.mhpr") if (root / "image_priors.mhpr").exists() else {}
    splits = {}
    for split in ("train", "val"):
        samples = []
        for s in iter_questions(root / f"{split}.jsonl"):
            if s.image not in features:
                raise DataError(f"sample {s.id}: unknown image {s.image}")
            s.text_prior = tp.get(s.id)
            s.image_prior = ip.get(s.id)
            if s.text_prior is not None and s.text_prior.size != len(s.tokens):
                raise DataError(f"sample {s.id}: text prior length {s.text_prior.size} != {len(s.tokens)} tokens")
            samples.append(s)
        splits[split] = samples
    answers = [a for a in (root / "answers.txt").read_text().splitlines() if a]
    manifest = json.loads((root / "manifest.json").read_text()) if (root / "manifest.json").exists() else {}
    return Dataset(root, splits["train"], splits["val"], features, read_embeddings(root / "embeddings.tsv"),
                   answers, manifest)


def read_truth(root) -> dict[int, dict]:
    out = {}
    with open(Path(root) / "truth.jsonl") as fh:
        for line in fh:
            r = json.loads(line)
            out[r["id"]] = r
    return out
