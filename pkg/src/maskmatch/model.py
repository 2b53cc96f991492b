"""Desk-scale vision transformer: classifier, visible-token encoder, decoder.

One parameter set serves three roles:

* ``classify``       - embed every patch token, run the encoder, mean-pool,
  linear head, softmax.
* ``encode_visible`` - run the same encoder on a subset of tokens (the
  masked-autoencoder trick: hidden tokens are simply absent).
* ``decode_full``    - project visible embeddings into a narrower decoder
  space, fill hidden positions with a shared learned mask token, run an
  auxiliary transformer, and predict pixel patches for every position.

The encoder used by ``classify`` and ``encode_visible`` is literally the
same function; the classifier is mean-pool plus head on top of it.
Position embeddings are fixed 2-D sine/cosine tables plugged in before
attention, so token order never matters. Parameters live in a flat
``name -> ndarray`` dict; wrap them with :func:`lift` to get gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import patchify
from .autodiff import Tensor, gelu, layer_norm, linear, scatter_tokens, softmax
from .errors import ConfigurationError, NumericError, ShapeError

FIXED_PARAMS = ("enc_pos_embed", "dec_pos_embed")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    channels: int = 3
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    mlp_ratio: float = 2.0
    num_classes: int = 4
    decoder_embed_dim: int = 32
    decoder_depth: int = 4
    decoder_num_heads: int = 4
    dtype: str = "float32"

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError("image_size must be divisible by patch_size")
        if self.embed_dim % self.num_heads or self.decoder_embed_dim % self.decoder_num_heads:
            raise ConfigurationError("embedding dims must be divisible by head counts")
        if self.embed_dim % 4 or self.decoder_embed_dim % 4:
            raise ConfigurationError("embedding dims must be multiples of 4 "
                                     "(2-D sine/cosine position tables)")
        if min(self.embed_dim, self.depth, self.num_heads, self.num_classes,
               self.decoder_embed_dim, self.decoder_depth, self.decoder_num_heads) < 1:
            raise ConfigurationError("all model dimensions must be positive")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def num_tokens(self):
        return self.grid * self.grid

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def sincos_pos_embed(embed_dim, grid_h, grid_w):
    """Fixed 2-D sine/cosine position table, ``[grid_h * grid_w, embed_dim]``."""
    half = embed_dim // 2

    def axis_table(positions, dim):
        freqs = 1.0 / (10000.0 ** (np.arange(dim // 2, dtype=np.float64) / (dim // 2)))
        angles = np.outer(positions, freqs)
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    ys, xs = np.mgrid[0:grid_h, 0:grid_w]
    table = np.concatenate(
        [axis_table(ys.reshape(-1), half), axis_table(xs.reshape(-1), half)], axis=1)
    return table


def _trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) resampled until every draw lies within two sigmas."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def _block_names(prefix, i):
    base = f"{prefix}{i}_"
    return base


def init_params(config, seed=0):
    """Initialize all parameter tensors: truncated normal weights, zero biases,
    unit norm gains, fixed sine/cosine position tables."""
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    p = {}

    def w(name, shape):
        p[name] = _trunc_normal(rng, shape).astype(dt)

    def zeros(name, shape):
        p[name] = np.zeros(shape, dtype=dt)

    def ones(name, shape):
        p[name] = np.ones(shape, dtype=dt)

    def blocks(prefix, depth, dim, ratio):
        hidden = int(dim * ratio)
        for i in range(depth):
            base = _block_names(prefix, i)
            ones(base + "ln1_g", dim)
            zeros(base + "ln1_b", dim)
            for proj in ("q", "k", "v", "o"):
                w(base + f"attn_w{proj}", (dim, dim))
                zeros(base + f"attn_b{proj}", dim)
            ones(base + "ln2_g", dim)
            zeros(base + "ln2_b", dim)
            w(base + "mlp_w1", (dim, hidden))
            zeros(base + "mlp_b1", hidden)
            w(base + "mlp_w2", (hidden, dim))
            zeros(base + "mlp_b2", dim)

    w("patch_proj_w", (config.patch_dim, config.embed_dim))
    zeros("patch_proj_b", config.embed_dim)
    p["enc_pos_embed"] = sincos_pos_embed(config.embed_dim, config.grid,
                                          config.grid).astype(dt)
    blocks("enc", config.depth, config.embed_dim, config.mlp_ratio)
    ones("enc_norm_g", config.embed_dim)
    zeros("enc_norm_b", config.embed_dim)
    w("head_w", (config.embed_dim, config.num_classes))
    zeros("head_b", config.num_classes)

    w("dec_proj_w", (config.embed_dim, config.decoder_embed_dim))
    zeros("dec_proj_b", config.decoder_embed_dim)
    w("mask_token", config.decoder_embed_dim)
    p["dec_pos_embed"] = sincos_pos_embed(config.decoder_embed_dim, config.grid,
                                          config.grid).astype(dt)
    blocks("dec", config.decoder_depth, config.decoder_embed_dim, config.mlp_ratio)
    ones("dec_norm_g", config.decoder_embed_dim)
    zeros("dec_norm_b", config.decoder_embed_dim)
    w("recon_w", (config.decoder_embed_dim, config.patch_dim))
    zeros("recon_b", config.patch_dim)
    return p


def trainable_names(params):
    return [k for k in params if k not in FIXED_PARAMS]


def lift(params, requires_grad=True):
    """Wrap a parameter dict in Tensors; fixed position tables never get grads."""
    return {k: Tensor(v, requires_grad=requires_grad and k not in FIXED_PARAMS)
            for k, v in params.items()}


def _ensure_tensors(params):
    if params and isinstance(next(iter(params.values())), Tensor):
        return params
    return lift(params, requires_grad=False)


# -- forward pieces -----------------------------------------------------------


def _layer_norm(x, gain, bias):
    return layer_norm(x, gain, bias)


def _attention(x, p, base, num_heads):
    b, n, dim = x.shape
    head_dim = dim // num_heads
    scale = float(head_dim) ** -0.5

    def heads(name):
        proj = linear(x, p[base + f"attn_w{name}"], p[base + f"attn_b{name}"])
        return proj.reshape(b, n, num_heads, head_dim).transpose(0, 2, 1, 3)

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = (q * scale) @ k.transpose(0, 1, 3, 2)
    mixed = softmax(scores, axis=-1) @ v
    merged = mixed.transpose(0, 2, 1, 3).reshape(b, n, dim)
    return linear(merged, p[base + "attn_wo"], p[base + "attn_bo"])


def _mlp(x, p, base):
    hidden = gelu(linear(x, p[base + "mlp_w1"], p[base + "mlp_b1"]))
    return linear(hidden, p[base + "mlp_w2"], p[base + "mlp_b2"])


def _transformer(x, p, prefix, depth, num_heads):
    for i in range(depth):
        base = _block_names(prefix, i)
        x = x + _attention(_layer_norm(x, p[base + "ln1_g"], p[base + "ln1_b"]),
                           p, base, num_heads)
        x = x + _mlp(_layer_norm(x, p[base + "ln2_g"], p[base + "ln2_b"]), p, base)
    return x


def encode_visible(params, config, patches, visible_idx):
    """Encode the selected tokens only. ``patches`` is ``[B, N, Dp]`` (or a
    single ``[N, Dp]``), ``visible_idx`` the matching ``[B, V]`` (or ``[V]``)
    integer positions. Returns encoder output ``[B, V, E]`` as a Tensor."""
    p = _ensure_tensors(params)
    arr = patches.data if isinstance(patches, Tensor) else np.asarray(patches)
    idx = np.asarray(visible_idx)
    single = arr.ndim == 2
    if single:
        arr, idx = arr[None], idx[None]
    if idx.shape[1] == 0:
        raise ValueError("visible token set must be nonempty")
    if arr.shape[1] != config.num_tokens or arr.shape[2] != config.patch_dim:
        raise ShapeError(f"patches {arr.shape} do not match config "
                         f"({config.num_tokens} tokens of dim {config.patch_dim})")
    dt = config.np_dtype
    vis_patches = np.take_along_axis(arr, idx[:, :, None], axis=1).astype(dt)
    tokens = linear(Tensor(vis_patches), p["patch_proj_w"], p["patch_proj_b"])
    pos = p["enc_pos_embed"].data[idx]  # fixed table, selected numpy-side
    tokens = tokens + Tensor(pos)
    x = _transformer(tokens, p, "enc", config.depth, config.num_heads)
    out = _layer_norm(x, p["enc_norm_g"], p["enc_norm_b"])
    if single:
        out = out.reshape(idx.shape[1], config.embed_dim)
    return out


def classify(params, config, images):
    """Class probabilities for ``[H, W, Ch]`` or ``[B, H, W, Ch]`` input."""
    p = _ensure_tensors(params)
    arr = np.asarray(images)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.shape[1] != config.image_size or arr.shape[2] != config.image_size \
            or arr.shape[3] != config.channels:
        raise ShapeError(f"images {arr.shape} do not match config "
                         f"{config.image_size}x{config.image_size}x{config.channels}")
    patches = patchify(arr, config.patch_size)
    all_idx = np.broadcast_to(np.arange(config.num_tokens), (arr.shape[0], config.num_tokens))
    encoded = encode_visible(p, config, patches, all_idx)
    pooled = encoded.mean(axis=1)
    probs = softmax(linear(pooled, p["head_w"], p["head_b"]), axis=-1)
    if not np.all(np.isfinite(probs.data)):
        raise NumericError("non-finite classifier output")
    return probs.reshape(config.num_classes) if single else probs


def decode_full(params, config, visible_embeddings, visible_idx, masked_idx):
    """Reconstruct patch vectors for all token positions.

    ``visible_embeddings`` is the ``[B, V, E]`` encoder output Tensor;
    ``visible_idx``/``masked_idx`` must partition ``[0, N)`` per element.
    Returns ``[B, N, Dp]`` predictions.
    """
    p = _ensure_tensors(params)
    vis = visible_embeddings
    single = vis.data.ndim == 2
    if single:
        vis = vis.reshape(1, *vis.shape)
        visible_idx = np.asarray(visible_idx)[None]
        masked_idx = np.asarray(masked_idx)[None]
    visible_idx = np.asarray(visible_idx)
    masked_idx = np.asarray(masked_idx)
    n = config.num_tokens
    for row_v, row_m in zip(visible_idx, masked_idx):
        cover = np.concatenate([row_v, row_m])
        if len(np.unique(cover)) != n or cover.min() != 0 or cover.max() != n - 1:
            raise ValueError("visible and masked indices must partition the token set")

    b = vis.data.shape[0]
    proj = linear(vis, p["dec_proj_w"], p["dec_proj_b"])
    canvas = scatter_tokens(proj, visible_idx, n)
    mask_flag = np.zeros((b, n, 1), dtype=config.np_dtype)
    np.put_along_axis(mask_flag, masked_idx[:, :, None], 1.0, axis=1)
    canvas = canvas + Tensor(mask_flag) * p["mask_token"]
    canvas = canvas + Tensor(p["dec_pos_embed"].data)
    x = _transformer(canvas, p, "dec", config.decoder_depth, config.decoder_num_heads)
    x = _layer_norm(x, p["dec_norm_g"], p["dec_norm_b"])
    recon = linear(x, p["recon_w"], p["recon_b"])
    return recon.reshape(n, config.patch_dim) if single else recon


def predict_probs(params, config, images, chunk=256):
    """Batched inference convenience: numpy probabilities ``[B, C]``."""
    arr = np.asarray(images)
    consts = lift(params, requires_grad=False) if not isinstance(
        next(iter(params.values())), Tensor) else params
    outs = []
    for start in range(0, arr.shape[0], chunk):
        outs.append(classify(consts, config, arr[start : start + chunk]).data)
    return np.concatenate(outs, axis=0)
