"""
Synthetic tasks and the dataset file format
===========================================

The benchmark never downloads anything: each task is rendered from a seeded
procedural generator. Classes are texture families (stripes, checkerboards,
blob grids) and the presets dial in noise, brightness shift, texture
frequency, and occlusion to create source/target transfer pairs.
"""

# %%
# Render the source task and inspect it. Images are (B, H, W, C) float32 in
# [0, 1]; labels are int64. The same (spec, seed) pair always produces the
# same bytes.

import numpy as np

from v2apt import PRESETS, generate, preset

ds = generate(preset("shift-A"), seed=0)
print("preset shift-A:", ds.descriptor)
print("images:", ds.images.shape, ds.images.dtype, "labels:", ds.labels.shape)

# %%
# A crude terminal rendering of one image per class. Stripes read as rows or
# columns of dark/bright bands; the checkerboard alternates; blobs cluster.

GLYPHS = " .:-=+*#%@"

def ascii_image(img):
    q = (img[..., 0] * (len(GLYPHS) - 1)).round().astype(int)
    return "\n".join("".join(GLYPHS[v] for v in row) for row in q)

for cls in range(ds.num_classes):
    idx = int(np.argmax(ds.labels == cls))
    print(f"\nclass {cls} (sample {idx}):")
    print(ascii_image(ds.images[idx]))

# %%
# The shifted targets keep the class families but move the pixel statistics:
# shift-B raises texture frequency and brightness, shift-B-hard adds random
# occlusion on top. That is what makes a head trained on frozen shift-A
# features fail while prompt tuning recovers.

for name in ("shift-B", "shift-B-hard"):
    spec = PRESETS[name]
    print(f"{name}: noise={spec.noise} brightness={spec.brightness} "
          f"frequency={spec.frequency} occlusion={spec.occlusion}")

# %%
# Datasets round-trip through a little-endian binary format with a CRC32
# footer, so a corrupted or truncated file is rejected instead of silently
# training on garbage.

import tempfile
from pathlib import Path

from v2apt import load_dataset, save_dataset, split

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "shift-A.v2ds"
    save_dataset(ds, path)
    back = load_dataset(path)
    print("round-trip identical:", np.array_equal(back.images, ds.images))
    print("file size (bytes):", path.stat().st_size)

# %%
# Splits are stratified and seeded: every class keeps the same train/test
# ratio, and the same seed always cuts the same way.

train, test = split(ds, train_frac=0.8, seed=0)
for name, part in (("train", train), ("test", test)):
    counts = np.bincount(part.labels, minlength=ds.num_classes)
    print(f"{name}: {len(part)} samples, per-class {counts.tolist()}")
