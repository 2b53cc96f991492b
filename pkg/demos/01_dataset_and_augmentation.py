"""Walk through the data pipeline: synthetic rendering, pools, augmentation.

The synthetic dataset encodes the class purely in shape geometry; color,
position, scale, background, and pixel noise all vary per sample. That
makes it a miniature stand-in for the real problem: a handful of labels
underdetermines the decision rule, and the unlabeled pool carries the
information needed to pin it down.

Run:  python demos/01_dataset_and_augmentation.py
Writes sample images (PPM, openable with most viewers) under demos/out/.
"""

import os

import numpy as np

from maskmatch.augment import strong_augment, weak_augment
from maskmatch.data import DatasetSpec, load_dataset, write_ppm

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# A small 4-class dataset: 4 labels per class, 200 unlabeled images.
spec = DatasetSpec(source="synthetic", num_classes=4, labels_per_class=4,
                   per_class=50, test_per_class=10, image_size=32, seed=7)
pools = load_dataset(spec)

print(f"labeled pool:   {pools.labeled_images.shape[0]} images "
      f"(balanced: {np.bincount(pools.labeled_labels).tolist()})")
print(f"unlabeled pool: {pools.unlabeled_images.shape[0]} images "
      f"(the labeled ones appear here too)")
print(f"test pool:      {pools.test_images.shape[0]} images")

# One example image per class, before augmentation.
for c in range(4):
    img = pools.labeled_images[pools.labeled_labels == c][0]
    write_ppm(os.path.join(OUT, f"class{c}.ppm"), img)
print(f"wrote class exemplars to {OUT}/class*.ppm")

# The same image under weak and strong augmentation. Weak is flip+crop;
# strong layers two random ops (color, geometry, ...) on top of a weak pass.
img = pools.labeled_images[0]
rng = np.random.default_rng(0)
write_ppm(os.path.join(OUT, "aug_original.ppm"), img)
write_ppm(os.path.join(OUT, "aug_weak.ppm"), weak_augment(img, rng))
for k in range(3):
    write_ppm(os.path.join(OUT, f"aug_strong{k}.ppm"), strong_augment(img, rng))
print(f"wrote augmentation examples to {OUT}/aug_*.ppm")

# Augmentations never leave the pixel range and never change the shape.
views = [strong_augment(img, rng) for _ in range(100)]
print(f"strong views: shape {views[0].shape}, "
      f"range [{min(v.min() for v in views):.2f}, "
      f"{max(v.max() for v in views):.2f}]")
