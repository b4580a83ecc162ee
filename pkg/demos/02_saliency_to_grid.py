"""
From a letterboxed saliency map to a grid prior
===============================================

Saliency models emit fixed-size maps. When the source image has a different
aspect ratio the map carries uniform borders. We strip them analytically and
pool the remaining pixels onto the feature grid.
"""

import tempfile
from pathlib import Path

import numpy as np

from humattn.saliency import (
    GridGeometry,
    SaliencyMap,
    content_box,
    crop_letterbox,
    image_prior_from_map,
    read_pgm,
    write_pgm,
)

np.set_printoptions(precision=3, suppress=True)

# a 4:3 image encoded into a square 120x120 map: content spans 90 rows
H = W = 120
yy, xx = np.mgrid[0:H, 0:W]
values = np.exp(-((yy - 50) ** 2 + (xx - 85) ** 2) / (2 * 8.0 ** 2))
top, left, h, w = content_box(H, W, 4 / 3)
values[:top] = values[top + h:] = 0.2  # the border carries a flat grey level
smap = SaliencyMap(values, content_aspect=4 / 3)
print("content box (top, left, h, w):", (top, left, h, w))

# %%
# Cropping removes the grey bands before pooling, so they cannot leak mass
# into the top and bottom grid rows.
cropped = crop_letterbox(smap)
print("cropped map shape:", cropped.values.shape)

grid = GridGeometry(4, 6)
with_border = image_prior_from_map(SaliencyMap(values, W / H), grid)
clean = image_prior_from_map(smap, grid)
print("prior without cropping\n", with_border.weights.data.reshape(4, 6))
print("prior after cropping\n", clean.weights.data.reshape(4, 6))

# %%
# Maps can be ingested as 8-bit PGM files with a JSON sidecar holding the
# content aspect ratio.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "map.pgm"
    write_pgm(path, np.round(values * 255), 4 / 3)  # pixel values are integers 0..255
    back = read_pgm(path)
    prior = image_prior_from_map(back, grid)
    print("prior from PGM (8-bit quantised)\n", prior.weights.data.reshape(4, 6))
