"""Cross-entropy primitives and the supervised/unsupervised loss terms.

Pseudo-labels are hard argmax targets detached from the graph: gradients
flow only through predictions on strongly augmented views. The
unsupervised loss is normalized by the full batch size, not by how many
samples passed the threshold, so filtering a sample removes its term
without rescaling the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import strong_augment, weak_augment
from .autodiff import Tensor, clamped_log
from .errors import NumericError
from .model import classify, predict_probs
from .thresholds import selection_mask

LOG_FLOOR = 1e-12


def cross_entropy(target, predicted):
    """-sum(target * log(max(predicted, floor))) for one distribution pair.

    ``predicted`` may be an ndarray (returns float) or Tensor (returns a
    Tensor through which gradients flow to the prediction only).
    """
    target = np.asarray(target, dtype=np.float64)
    if isinstance(predicted, Tensor):
        logp = clamped_log(predicted, LOG_FLOOR)
        return -((Tensor(target.astype(predicted.data.dtype)) * logp).sum())
    pred = np.asarray(predicted, dtype=np.float64)
    return float(-(target * np.log(np.maximum(pred, LOG_FLOOR))).sum())


def batch_cross_entropy(probs, targets):
    """Per-sample soft-target cross entropy: ``[B, C] x [B, C] -> [B]`` Tensor."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    t = np.asarray(targets, dtype=probs.data.dtype)
    return -((Tensor(t) * clamped_log(probs, LOG_FLOOR)).sum(axis=1))


def mean_cross_entropy(probs, targets):
    return batch_cross_entropy(probs, targets).mean()


def masked_mean_cross_entropy(probs, targets, mask, batch_size):
    """Sum of masked-in per-sample cross entropies divided by the batch size."""
    ce = batch_cross_entropy(probs, targets)
    weights = np.asarray(mask, dtype=ce.data.dtype)
    return (ce * Tensor(weights)).sum() * (1.0 / batch_size)


def supervised_loss(params, config, images, labels, rng, policy=None):
    """Mean cross entropy of the classifier on weakly augmented labeled images."""
    views = np.stack([weak_augment(img, rng, policy) for img in images])
    probs = classify(params, config, views)
    return mean_cross_entropy(probs, np.asarray(labels))


def unsupervised_loss(params, config, images, state, rng,
                      weak=None, strong=None):
    """Thresholded consistency loss on one unlabeled batch.

    Weak views produce probabilities (no gradients) that drive the
    selection mask and pseudo-labels; strong views produce the predictions
    the loss trains. Returns ``(loss, mask, pseudo_labels, weak_probs)``;
    the weak probabilities feed threshold updates and utilization
    accounting in the caller.
    """
    raw = {k: (v.data if isinstance(v, Tensor) else v) for k, v in params.items()}
    weak_views = np.stack([weak_augment(img, rng, weak) for img in images])
    strong_views = np.stack([strong_augment(img, rng, strong) for img in images])
    weak_probs = predict_probs(raw, config, weak_views)
    mask, pseudo = selection_mask(weak_probs, state)
    batch_size = len(images)
    if mask.sum() == 0:
        loss = Tensor(np.asarray(0.0, dtype=config.np_dtype))
    else:
        strong_probs = classify(params, config, strong_views)
        loss = masked_mean_cross_entropy(strong_probs, pseudo, mask, batch_size)
    return loss, mask, pseudo, weak_probs


def total_loss(loss_s, loss_u, loss_mae, loss_sdt,
               lambda_u=1.0, lambda_mae=0.01, lambda_sdt=0.5):
    """Weighted sum in fixed accumulation order.

    Works on floats (validated finite) and on Tensors (for the backward
    graph) alike.
    """
    components = (loss_s, loss_u, loss_mae, loss_sdt)
    if not any(isinstance(c, Tensor) for c in components):
        vals = [float(c) for c in components]
        if not all(np.isfinite(v) for v in vals):
            raise NumericError(f"non-finite loss components: {vals}")
        return ((vals[0] + lambda_u * vals[1]) + lambda_mae * vals[2]) \
            + lambda_sdt * vals[3]
    return ((loss_s + lambda_u * loss_u) + lambda_mae * loss_mae) \
        + lambda_sdt * loss_sdt


@dataclass(frozen=True)
class LossBundle:
    loss_s: float
    loss_u: float
    loss_mae: float
    loss_sdt: float
    total: float
    lambda_u: float
    lambda_mae: float
    lambda_sdt: float
    pass_count: int


def make_bundle(loss_s, loss_u, loss_mae, loss_sdt, lambda_u, lambda_mae,
                lambda_sdt, pass_count):
    """Assemble the reporting bundle; the total is recomputed in float64 so it
    always equals an independent recomputation from the logged components."""
    ls, lu = float(loss_s), float(loss_u)
    lm, lsd = float(loss_mae), float(loss_sdt)
    return LossBundle(
        loss_s=ls, loss_u=lu, loss_mae=lm, loss_sdt=lsd,
        total=total_loss(ls, lu, lm, lsd, lambda_u, lambda_mae, lambda_sdt),
        lambda_u=lambda_u, lambda_mae=lambda_mae, lambda_sdt=lambda_sdt,
        pass_count=int(pass_count))
