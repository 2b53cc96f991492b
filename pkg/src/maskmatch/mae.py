"""Masked-autoencoder objective: masking plans and reconstruction loss.

Every image, labeled or not, gets an independent random masking plan.
The encoder sees only the visible tokens; the decoder predicts patch
vectors for all positions and the loss averages squared error over the
masked positions only, so nothing the encoder saw is ever a target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .augment import patchify
from .autodiff import Tensor, gather_tokens
from .errors import ShapeError
from .model import decode_full, encode_visible

NORM_EPSILON = 1e-6


@dataclass(frozen=True)
class MaskingPlan:
    masked: np.ndarray  # sorted masked token indices
    num_tokens: int
    ratio: float

    @property
    def visible(self):
        return np.setdiff1d(np.arange(self.num_tokens), self.masked)


def masked_count(num_tokens, ratio):
    """round(ratio * N), clamped so both sides of the split are nonempty."""
    return int(min(max(math.floor(ratio * num_tokens + 0.5), 1), num_tokens - 1))


def make_masking_plan(num_tokens, ratio, rng):
    """Sample a uniform without-replacement masking plan."""
    if num_tokens < 2:
        raise ValueError("need at least 2 tokens to split into masked/visible")
    if not 0.0 < ratio < 1.0:
        raise ValueError("masking ratio must be in (0, 1)")
    count = masked_count(num_tokens, ratio)
    masked = np.sort(rng.choice(num_tokens, size=count, replace=False))
    return MaskingPlan(masked=masked, num_tokens=num_tokens, ratio=ratio)


def normalize_patch(patch):
    """Zero-mean, unit-variance patch values (population std, epsilon-guarded)."""
    arr = np.asarray(patch, dtype=np.float64)
    return (arr - arr.mean()) / (arr.std() + NORM_EPSILON)


def _normalize_rows(patches):
    mean = patches.mean(axis=-1, keepdims=True)
    std = patches.std(axis=-1, keepdims=True)
    return (patches - mean) / (std + NORM_EPSILON)


def _masked_mse(recon, targets, masked_idx):
    """Mean over masked tokens of per-patch mean squared error, then over batch.

    ``recon`` is a ``[B, N, Dp]`` Tensor, ``targets`` a matching ndarray,
    ``masked_idx`` an integer ``[B, M]``.
    """
    recon_masked = gather_tokens(recon, masked_idx)
    target_masked = np.take_along_axis(targets, masked_idx[:, :, None], axis=1)
    diff = recon_masked - Tensor(target_masked.astype(recon.data.dtype))
    return (diff * diff).mean(axis=2).mean(axis=1).mean()


def mae_loss(target_patches, reconstructed, plan, normalize=False):
    """Reconstruction loss for one image given its masking plan.

    Accepts the reconstruction as either an ndarray (returns a float) or a
    Tensor (returns a Tensor so gradients can flow).
    """
    targets = np.asarray(target_patches, dtype=np.float64)
    tensor_in = isinstance(reconstructed, Tensor)
    recon = reconstructed if tensor_in else Tensor(np.asarray(reconstructed, dtype=np.float64))
    if targets.shape != recon.data.shape:
        raise ShapeError(f"targets {targets.shape} vs reconstruction {recon.data.shape}")
    if targets.shape[0] != plan.num_tokens:
        raise ShapeError("patch count does not match the masking plan")
    if normalize:
        targets = _normalize_rows(targets)
    out = _masked_mse(recon.reshape(1, *recon.data.shape),
                      targets[None].astype(recon.data.dtype),
                      plan.masked[None])
    return out if tensor_in else float(out.data)


def mae_forward(params, config, images, ratio, normalize, rngs):
    """Reconstruction loss averaged over a batch of images.

    ``rngs`` is either one generator (plans drawn sequentially) or a
    sequence of per-image generators, which makes the result independent
    of batch order.
    """
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    batch = arr.shape[0]
    if batch == 0:
        raise ValueError("mae_forward needs at least one image")
    n = config.num_tokens
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs] * batch
    if len(rngs) != batch:
        raise ShapeError("need one generator per image")

    plans = [make_masking_plan(n, ratio, rng) for rng in rngs]
    masked_idx = np.stack([plan.masked for plan in plans])
    visible_idx = np.stack([plan.visible for plan in plans])

    patches = patchify(arr, config.patch_size).astype(config.np_dtype)
    targets = _normalize_rows(patches) if normalize else patches  # encoder sees raw pixels
    encoded = encode_visible(params, config, patches, visible_idx)
    recon = decode_full(params, config, encoded, visible_idx, masked_idx)
    return _masked_mse(recon, targets, masked_idx)
