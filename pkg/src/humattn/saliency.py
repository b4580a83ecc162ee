"""Text and image attention priors.

The text prior comes from a small trainable network (BiLSTM, one transformer
layer, per-token scalar head) that is optimised jointly with the VQA model.
The image prior is computed from a precomputed saliency map: letterbox
borders are removed analytically from the aspect ratios, pixels are summed
per grid cell, and the cell masses are normalised.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .attention import AttentionPrior, MultiHeadConfig, SelfAttention
from .errors import DimensionError, FormatError, ValidationError
from .layers import LSTM, Linear, Module
from .numcore import Tensor

log = logging.getLogger(__name__)

MAP_MAGIC = b"MSAL"
MAX_ROWS, MAX_COLS = 19, 32
DETECTOR_CELL_RANGE = (192, 608)


class TextSaliencyNet(Module):
    """Scores every question token; output is a masked-softmax distribution."""

    def __init__(self, rng, d_in: int, hidden: int = 128, heads: int = 4, dtype=np.float64):
        self.fwd = LSTM(rng, d_in, hidden, dtype)
        self.bwd = LSTM(rng, d_in, hidden, dtype)
        self.proj = Linear(rng, 2 * hidden, hidden, dtype)
        self.layer = SelfAttention(rng, MultiHeadConfig(hidden, heads, 4 * hidden), dtype)
        self.score = Linear(rng, hidden, 1, dtype)
        self.hidden = hidden

    def logits(self, emb: Tensor, mask) -> Tensor:
        mask = np.asarray(mask, dtype=bool)
        h = nc.concat([self.fwd(emb, mask), self.bwd(emb, mask, reverse=True)], axis=-1)
        h = self.layer(self.proj(h), mask=mask)
        s = self.score(h)
        return nc.reshape(s, s.shape[:-1])

    def __call__(self, emb: Tensor, mask, apply_mode: str = "per_key") -> AttentionPrior:
        """``emb`` is ``[B, n, d_in]`` (or ``[n, d_in]``); returns a ``sum_to_one`` prior."""
        squeeze = emb.ndim == 2
        mask = np.asarray(mask, dtype=bool)
        if squeeze:
            emb, mask = nc.reshape(emb, (1,) + emb.shape), mask[None]
        if not mask.any(axis=-1).all():
            raise ValidationError("empty question: no valid tokens")
        w = nc.softmax(self.logits(emb, mask), mask=mask)
        if squeeze:
            w, mask = nc.reshape(w, w.shape[1:]), mask[0]
        return AttentionPrior(w, "sum_to_one", apply_mode, mask)


def tsm_forward(net: TextSaliencyNet, embeddings: Tensor, mask, apply_mode: str = "per_key") -> AttentionPrior:
    return net(embeddings, mask, apply_mode)


@dataclass
class SaliencyMap:
    values: np.ndarray
    content_aspect: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise DimensionError(f"saliency map must be a non-empty 2-D array, got {self.values.shape}")
        if (self.values < 0).any() or not np.isfinite(self.values).all():
            raise ValidationError("saliency map values must be finite and nonnegative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GridGeometry:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")

    @property
    def cells(self) -> int:
        return self.rows * self.cols

    def check_full_scale(self) -> None:
        lo, hi = DETECTOR_CELL_RANGE
        if self.rows > MAX_ROWS or self.cols > MAX_COLS or not lo <= self.cells <= hi:
            raise ValidationError(f"grid {self.rows}x{self.cols} outside full-scale bounds")


def content_box(height: int, width: int, content_aspect: float) -> tuple[int, int, int, int]:
    """(top, left, h, w) of the centred content rectangle inside a letterboxed map."""
    if not content_aspect > 0:
        raise ValidationError(f"content_aspect must be positive, got {content_aspect}")
    map_aspect = width / height
    if np.isclose(content_aspect, map_aspect, rtol=1e-9, atol=0):
        return 0, 0, height, width
    if content_aspect > map_aspect:
        h, w = int(round(width / content_aspect)), width
    else:
        h, w = height, int(round(height * content_aspect))
    if h < 1 or w < 1:
        raise ValidationError(f"content rectangle {h}x{w} is smaller than one pixel")
    return (height - h) // 2, (width - w) // 2, h, w


def crop_letterbox(smap: SaliencyMap) -> SaliencyMap:
    top, left, h, w = content_box(smap.height, smap.width, smap.content_aspect)
    if (h, w) == (smap.height, smap.width):
        return smap
    return SaliencyMap(smap.values[top:top + h, left:left + w], smap.content_aspect)


def cell_sums(values: np.ndarray, grid: GridGeometry) -> np.ndarray:
    """Per-cell pixel sums, row-major; pixel (y, x) -> cell (y*rows//H, x*cols//W)."""
    H, W = values.shape
    if grid.rows > H or grid.cols > W:
        raise DimensionError(f"grid {grid.rows}x{grid.cols} finer than map {H}x{W}")
    ry = np.arange(H) * grid.rows // H
    cx = np.arange(W) * grid.cols // W
    cell = (ry[:, None] * grid.cols + cx[None, :]).ravel()
    return np.bincount(cell, weights=values.ravel(), minlength=grid.cells)


def aggregate_to_grid(smap: SaliencyMap, grid: GridGeometry, norm_mode: str = "sum_to_one",
                      apply_mode: str = "per_key") -> AttentionPrior:
    sums = cell_sums(smap.values, grid)
    total = sums.sum()
    if total <= 0:
        log.warning("all-zero saliency map; using a uniform prior over %d cells", grid.cells)
        w = np.full(grid.cells, 1.0 / grid.cells)
    else:
        w = sums / total
    if norm_mode == "mean_one":
        w = w * grid.cells
    return AttentionPrior(Tensor(w), norm_mode, apply_mode)


def image_prior_from_map(smap: SaliencyMap, grid: GridGeometry, norm_mode: str = "sum_to_one",
                         apply_mode: str = "per_key") -> AttentionPrior:
    return aggregate_to_grid(crop_letterbox(smap), grid, norm_mode, apply_mode)


# file formats

def write_map(path, smap: SaliencyMap) -> None:
    H, W = smap.values.shape
    with open(path, "wb") as fh:
        fh.write(MAP_MAGIC)
        fh.write(struct.pack("<IIf", H, W, smap.content_aspect))
        fh.write(smap.values.astype("<f4").tobytes())


def read_map(path) -> SaliencyMap:
    raw = Path(path).read_bytes()
    if raw[:4] != MAP_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAP_MAGIC!r}")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    H, W, aspect = struct.unpack_from("<IIf", raw, 4)
    body = raw[16:]
    if len(body) != 4 * H * W:
        raise FormatError(f"{path}: expected {4 * H * W} payload bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f4").reshape(H, W).astype(np.float64)
    return SaliencyMap(values, float(aspect))


def _pgm_tokens(raw: bytes, count: int, start: int = 0):
    """Yield ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, i = [], start
    while len(tokens) < count:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PGM header")
        tokens.append(raw[i:j])
        i = j
    return tokens, i


def read_pgm(path, aspect_path=None) -> SaliencyMap:
    """Read a P2/P5 PGM; the content aspect comes from a JSON sidecar (``<path>.json``)."""
    path = Path(path)
    raw = path.read_bytes()
    (magic, w, h, maxval), end = _pgm_tokens(raw, 4)
    W, H, maxval = int(w), int(h), int(maxval)
    if magic == b"P5":
        dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
        body = raw[end + 1:]
        if len(body) < H * W * dtype.itemsize:
            raise FormatError(f"{path}: truncated P5 payload")
        values = np.frombuffer(body[:H * W * dtype.itemsize], dtype=dtype).reshape(H, W)
    elif magic == b"P2":
        nums = raw[end:].split()
        if len(nums) < H * W:
            raise FormatError(f"{path}: truncated P2 payload")
        values = np.array([int(v) for v in nums[:H * W]]).reshape(H, W)
    else:
        raise FormatError(f"{path}: not a P2/P5 PGM (magic {magic!r})")
    sidecar = Path(aspect_path) if aspect_path else path.with_suffix(path.suffix + ".json")
    try:
        meta = json.loads(sidecar.read_text())
        aspect = float(meta["content_aspect"])
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"{sidecar}: missing or invalid content_aspect sidecar") from exc
    return SaliencyMap(values.astype(np.float64), aspect)


def write_pgm(path, values: np.ndarray, content_aspect: float, binary: bool = True) -> None:
    values = np.asarray(values)
    H, W = values.shape
    maxval = max(int(values.max()), 1)
    path = Path(path)
    header = f"{'P5' if binary else 'P2'}\n{W} {H}\n{maxval}\n".encode()
    if binary:
        dtype = "u1" if maxval < 256 else ">u2"
        payload = values.astype(dtype).tobytes()
    else:
        payload = "\n".join(" ".join(str(int(v)) for v in row) for row in values).encode() + b"\n"
    path.write_bytes(header + payload)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps({"content_aspect": content_aspect}))
