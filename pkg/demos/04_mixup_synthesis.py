"""Synthetic data via mixup: coefficient law, pairing, label structure.

Confident unlabeled samples (the clean set) join the labeled batch; each
member is blended with a cyclically shifted partner using a coefficient
drawn from a folded Beta(0.5, 0.5). The fold keeps the weight on the
first parent at or above one half, so every synthetic sample inherits its
primary parent's identity, and the soft label is a two-hot mixture.

Run:  python demos/04_mixup_synthesis.py
"""

import numpy as np

from maskmatch.data import generate_synthetic_dataset, one_hot
from maskmatch.sdt import build_synthetic_batch, draw_mix_coefficient, select_clean_set

rng = np.random.default_rng(11)

# The folded-Beta coefficient: support [0.5, 1), mean 1/2 + 1/pi.
draws = np.array([draw_mix_coefficient(rng) for _ in range(100_000)])
print(f"coefficient: mean {draws.mean():.4f} "
      f"(theory {0.5 + 1 / np.pi:.4f}), "
      f"range [{draws.min():.4f}, {draws.max():.4f}]")
edges = np.linspace(0.5, 1.0, 11)
counts, _ = np.histogram(draws, bins=edges)
print("histogram over [0.5, 1.0):")
for lo, hi, n in zip(edges[:-1], edges[1:], counts):
    print(f"  [{lo:.2f}, {hi:.2f}) {'#' * (n * 200 // len(draws))}")

# Clean-set selection feeds the mix: suppose 3 of 6 unlabeled samples
# passed the threshold with these pseudo-labels.
images, labels, _, _ = generate_synthetic_dataset(4, 4, image_size=16, seed=2)
unlabeled = images[:6]
mask = np.array([1, 0, 1, 0, 0, 1])
pseudo = one_hot([0, 1, 2, 3, 0, 1], 4)
clean = select_clean_set(unlabeled, mask, pseudo)
print(f"\nclean set: {len(clean)} of 6 samples survived the mask")

labeled_images = images[6:10]
labeled_onehot = one_hot(labels[6:10], 4)
batch = build_synthetic_batch(labeled_images, labeled_onehot, clean, rng)
print(f"synthetic batch: {len(batch)} pairs "
      f"(labeled {len(labeled_images)} + clean {len(clean)})")
print("per-pair mixing weight and soft label:")
for lam, soft in zip(batch.lams, batch.labels):
    support = np.flatnonzero(soft > 0)
    label = " + ".join(f"{soft[c]:.2f}*class{c}" for c in support)
    print(f"  weight {lam:.3f}: {label}")
