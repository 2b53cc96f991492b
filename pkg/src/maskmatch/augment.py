"""Weak and strong image augmentation, plus patch/token conversion.

Images are ``[H, W, Ch]`` float arrays with values in [0, 1]. The weak
transform is flip-and-crop; the strong transform layers a small
RandAugment-style op pool on top of a weak pass. Geometric ops fill
exposed pixels with mid-gray (0.5) so outputs stay in range.

All randomness comes from an explicit ``numpy.random.Generator``; the
draw order per call is fixed, so a reseeded generator replays a
transform exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve

from .errors import ConfigurationError, ShapeError

FILL_VALUE = 0.5

# (lo, hi) magnitude bounds per strong op; auto-contrast takes no magnitude.
# Geometric ranges stay moderate: the op must perturb, not destroy, whatever
# carries the label.
DEFAULT_MAGNITUDES = {
    "auto_contrast": (0.0, 1.0),
    "brightness": (0.5, 1.5),
    "color": (0.5, 1.5),
    "contrast": (0.5, 1.5),
    "posterize": (5.0, 8.0),
    "sharpness": (0.5, 1.5),
    "shear_x": (-0.15, 0.15),
    "translate_x": (-0.2, 0.2),
}

DEFAULT_STRONG_OPS = tuple(DEFAULT_MAGNITUDES)


@dataclass(frozen=True)
class AugmentationPolicy:
    kind: str = "weak"  # "weak" | "strong"
    crop_padding: int = 4
    flip_probability: float = 0.5
    strong_ops: tuple = DEFAULT_STRONG_OPS
    strong_ops_per_image: int = 2
    magnitude_range: dict = field(default_factory=lambda: dict(DEFAULT_MAGNITUDES))

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigurationError("flip_probability must be in [0, 1]")
        if self.crop_padding < 0:
            raise ConfigurationError("crop_padding must be nonnegative")
        if self.strong_ops_per_image < 1:
            raise ConfigurationError("strong_ops_per_image must be >= 1")


def weak_policy(crop_padding=4, flip_probability=0.5):
    return AugmentationPolicy(kind="weak", crop_padding=crop_padding,
                              flip_probability=flip_probability)


def strong_policy(crop_padding=4, flip_probability=0.5, ops=DEFAULT_STRONG_OPS,
                  ops_per_image=2, magnitudes=None):
    return AugmentationPolicy(
        kind="strong", crop_padding=crop_padding, flip_probability=flip_probability,
        strong_ops=tuple(ops), strong_ops_per_image=ops_per_image,
        magnitude_range=dict(magnitudes or DEFAULT_MAGNITUDES))


# -- pixel-level ops ---------------------------------------------------------


def _identity(img, _magnitude):
    return img


def _auto_contrast(img, _magnitude):
    lo = img.min(axis=(0, 1), keepdims=True)
    hi = img.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    scaled = np.where(span > 1e-8, (img - lo) / np.maximum(span, 1e-8), img)
    return np.clip(scaled, 0.0, 1.0)


def _brightness(img, magnitude):
    return np.clip(img * magnitude, 0.0, 1.0)


def _color(img, magnitude):
    gray = img.mean(axis=2, keepdims=True)
    return np.clip(gray + magnitude * (img - gray), 0.0, 1.0)


def _contrast(img, magnitude):
    mean = img.mean()
    return np.clip(mean + magnitude * (img - mean), 0.0, 1.0)


def _posterize(img, magnitude):
    bits = int(np.clip(np.floor(magnitude), 1, 8))
    levels = float(2 ** bits - 1)
    return np.clip(np.round(img * levels) / levels, 0.0, 1.0)


_SMOOTH_KERNEL = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


def _sharpness(img, magnitude):
    smooth = np.empty_like(img)
    for c in range(img.shape[2]):
        smooth[:, :, c] = convolve(img[:, :, c], _SMOOTH_KERNEL.astype(img.dtype),
                                   mode="nearest")
    return np.clip(smooth + magnitude * (img - smooth), 0.0, 1.0)


def _shear_x(img, magnitude):
    h, w, _ = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    src_x = np.rint(xs + magnitude * ys).astype(np.int64)
    valid = (src_x >= 0) & (src_x < w)
    out = np.full_like(img, FILL_VALUE)
    out[valid] = img[ys[valid], src_x[valid]]
    return out


def _translate_x(img, magnitude):
    h, w, _ = img.shape
    shift = int(np.rint(magnitude * w))
    out = np.full_like(img, FILL_VALUE)
    if shift >= 0:
        if shift < w:
            out[:, shift:] = img[:, : w - shift]
    else:
        if -shift < w:
            out[:, : w + shift] = img[:, -shift:]
    return out


STRONG_OP_TABLE = {
    "identity": _identity,
    "auto_contrast": _auto_contrast,
    "brightness": _brightness,
    "color": _color,
    "contrast": _contrast,
    "posterize": _posterize,
    "sharpness": _sharpness,
    "shear_x": _shear_x,
    "translate_x": _translate_x,
}


# -- weak / strong transforms -------------------------------------------------


def weak_augment(image, rng, policy=None):
    """Random horizontal flip, then pad-and-random-crop back to size."""
    policy = policy or AugmentationPolicy()
    img = np.asarray(image)
    if img.ndim != 3:
        raise ShapeError(f"expected [H, W, Ch] image, got shape {img.shape}")
    if rng.random() < policy.flip_probability:
        img = img[:, ::-1, :]
    pad = policy.crop_padding
    if pad > 0:
        h, w, ch = img.shape
        canvas = np.full((h + 2 * pad, w + 2 * pad, ch), FILL_VALUE, dtype=img.dtype)
        canvas[pad : pad + h, pad : pad + w] = img
        oy, ox = rng.integers(0, 2 * pad + 1, size=2)
        img = canvas[oy : oy + h, ox : ox + w]
    return np.ascontiguousarray(img)


def strong_augment(image, rng, policy=None):
    """Weak pass, then ``strong_ops_per_image`` random ops from the pool."""
    policy = policy or strong_policy()
    if len(policy.strong_ops) == 0:
        raise ConfigurationError("strong op pool is empty")
    img = weak_augment(image, rng, policy)
    choices = rng.integers(0, len(policy.strong_ops), size=policy.strong_ops_per_image)
    for op_index in choices:
        name = policy.strong_ops[op_index]
        lo, hi = policy.magnitude_range.get(name, (0.0, 1.0))
        magnitude = rng.uniform(lo, hi)
        img = STRONG_OP_TABLE[name](img, magnitude)
    return np.clip(img, 0.0, 1.0)


# -- patch/token conversion ----------------------------------------------------


def patchify(image, patch_size):
    """Split ``[H, W, Ch]`` (or ``[B, H, W, Ch]``) into row-major patch vectors.

    Each patch vector has length ``patch_size * patch_size * Ch`` with pixel
    rows contiguous and channels fastest.
    """
    img = np.asarray(image)
    single = img.ndim == 3
    if single:
        img = img[None]
    if img.ndim != 4:
        raise ShapeError(f"expected [H, W, Ch] or [B, H, W, Ch], got {img.shape}")
    b, h, w, ch = img.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    patches = (img.reshape(b, gh, p, gw, p, ch)
                  .transpose(0, 1, 3, 2, 4, 5)
                  .reshape(b, gh * gw, p * p * ch))
    return patches[0] if single else patches


def unpatchify(patches, patch_size, height, width, channels):
    """Exact inverse of :func:`patchify`."""
    arr = np.asarray(patches)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    b, n, d = arr.shape
    p = patch_size
    gh, gw = height // p, width // p
    if n != gh * gw or d != p * p * channels:
        raise ShapeError(
            f"{n} patches of dim {d} cannot tile {height}x{width}x{channels} "
            f"with patch size {p}")
    img = (arr.reshape(b, gh, gw, p, p, channels)
              .transpose(0, 1, 3, 2, 4, 5)
              .reshape(b, height, width, channels))
    return img[0] if single else img
