"""Synthetic data training: clean-set selection and mixup synthesis.

Confident pseudo-labeled samples are pooled with the labeled batch and
pairwise blended. The blend weight is drawn from a folded Beta(0.5, 0.5),
so every synthetic sample stays closer to its first parent; partners come
from a random cyclic shift, which guarantees no sample is mixed with
itself. The synthetic batch gets its own cross-entropy term, trained
jointly with the loss on the original samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import classify


@dataclass(frozen=True)
class CleanSet:
    images: np.ndarray   # [n, H, W, Ch]
    labels: np.ndarray   # [n, C] one-hot pseudo-labels
    ids: np.ndarray      # [n] source sample identifiers

    def __len__(self):
        return int(self.images.shape[0])


@dataclass(frozen=True)
class SyntheticBatch:
    images: np.ndarray   # [n, H, W, Ch]
    labels: np.ndarray   # [n, C] convex combinations of two one-hots
    lams: np.ndarray     # [n] mixing coefficients, each in [0.5, 1]

    def __len__(self):
        return int(self.images.shape[0])


def select_clean_set(images, mask, pseudo_labels, ids=None):
    """Samples with ``mask == 1`` paired with their one-hot pseudo-labels."""
    images = np.asarray(images)
    mask = np.asarray(mask)
    pseudo_labels = np.asarray(pseudo_labels)
    if not (len(images) == len(mask) == len(pseudo_labels)):
        raise ShapeError("images, mask, and pseudo_labels must have equal length")
    if ids is None:
        ids = np.arange(len(images))
    keep = mask.astype(bool)
    return CleanSet(images=images[keep], labels=pseudo_labels[keep],
                    ids=np.asarray(ids)[keep])


def draw_mix_coefficient(rng):
    """Folded Beta(0.5, 0.5) draw in [0.5, 1).

    Uses the exact inverse transform sin^2(pi * u / 2) of the arcsine law;
    u == 0 is redrawn so the unfolded draw stays inside (0, 1).
    """
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    raw = math.sin(math.pi * u / 2.0) ** 2
    return max(raw, 1.0 - raw)


def mix_pair(x_i, p_i, x_j, p_j, lam):
    """Convex blend of two (image, label) pairs with weight ``lam`` on the first."""
    x_i, x_j = np.asarray(x_i), np.asarray(x_j)
    if x_i.shape != x_j.shape:
        raise ShapeError(f"image shapes differ: {x_i.shape} vs {x_j.shape}")
    p_i, p_j = np.asarray(p_i), np.asarray(p_j)
    if p_i.shape != p_j.shape:
        raise ShapeError(f"label shapes differ: {p_i.shape} vs {p_j.shape}")
    return lam * x_i + (1.0 - lam) * x_j, lam * p_i + (1.0 - lam) * p_j


def build_synthetic_batch(labeled_images, labeled_labels, clean_set, rng):
    """Mix the union of labeled data and the clean set against a shifted copy.

    Draw order: one cyclic-shift offset, then one coefficient per pair. A
    singleton union is returned unmixed with coefficient 1.
    """
    images = np.asarray(labeled_images)
    labels = np.asarray(labeled_labels)
    if len(images) == 0 and len(clean_set) == 0:
        raise ValueError("cannot synthesize from an empty union")
    if len(clean_set) > 0:
        images = np.concatenate([images, clean_set.images], axis=0) \
            if len(images) else clean_set.images
        labels = np.concatenate([labels, clean_set.labels], axis=0) \
            if len(labels) else clean_set.labels
    n = len(images)
    if n == 1:
        return SyntheticBatch(images=images.copy(), labels=labels.copy(),
                              lams=np.ones(1))
    offset = int(rng.integers(1, n))
    partner = (np.arange(n) + offset) % n
    lams = np.array([draw_mix_coefficient(rng) for _ in range(n)])
    lam_img = lams.reshape(n, 1, 1, 1).astype(images.dtype)
    lam_lab = lams.reshape(n, 1)
    mixed_images = lam_img * images + (1.0 - lam_img) * images[partner]
    mixed_labels = lam_lab * labels + (1.0 - lam_lab) * labels[partner]
    return SyntheticBatch(images=mixed_images, labels=mixed_labels, lams=lams)


def sdt_loss(params, config, batch):
    """Soft-target cross-entropy of the classifier on the synthetic batch.

    The synthetic images are fed as-is; no further augmentation.
    """
    if len(batch) == 0:
        raise ValueError("synthetic batch is empty")
    from .losses import mean_cross_entropy  # deferred: losses imports this module

    probs = classify(params, config, batch.images)
    return mean_cross_entropy(probs, batch.labels)
