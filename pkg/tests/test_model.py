"""Tests for the vision transformer core."""

import numpy as np
import pytest

from maskmatch.augment import patchify
from maskmatch.errors import ConfigurationError, ShapeError
from maskmatch.model import (
    FIXED_PARAMS,
    ModelConfig,
    classify,
    decode_full,
    encode_visible,
    init_params,
    lift,
    predict_probs,
    sincos_pos_embed,
)


def toy_config(**kw):
    base = dict(image_size=8, channels=3, patch_size=4, embed_dim=16, depth=2,
                num_heads=2, mlp_ratio=2.0, num_classes=3, decoder_embed_dim=16,
                decoder_depth=1, decoder_num_heads=2, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def expected_param_count(cfg):
    """Closed-form trainable parameter count, written independently."""
    e, dd = cfg.embed_dim, cfg.decoder_embed_dim
    dp, c = cfg.patch_dim, cfg.num_classes

    def block(dim):
        hidden = int(dim * cfg.mlp_ratio)
        ln = 2 * (2 * dim)
        attn = 4 * (dim * dim + dim)
        mlp = dim * hidden + hidden + hidden * dim + dim
        return ln + attn + mlp

    total = dp * e + e                     # patch projection
    total += cfg.depth * block(e)
    total += 2 * e                          # final encoder norm
    total += e * c + c                      # head
    total += e * dd + dd                    # decoder projection
    total += dd                             # mask token
    total += cfg.decoder_depth * block(dd)
    total += 2 * dd                         # final decoder norm
    total += dd * dp + dp                   # reconstruction head
    return total


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            toy_config(image_size=10)  # not divisible by patch 4
        with pytest.raises(ConfigurationError):
            toy_config(embed_dim=18)   # not a multiple of 4
        with pytest.raises(ConfigurationError):
            toy_config(num_heads=3)    # does not divide 16
        with pytest.raises(ConfigurationError):
            toy_config(decoder_depth=0)

    def test_derived_sizes(self):
        cfg = toy_config()
        assert cfg.num_tokens == 4 and cfg.patch_dim == 48


class TestInit:
    def test_deterministic(self):
        cfg = toy_config()
        a, b = init_params(cfg, seed=5), init_params(cfg, seed=5)
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_biases_zero_and_gains_one(self):
        params = init_params(toy_config(), seed=0)
        for k, v in params.items():
            if k.endswith(("_b", "_bq", "_bk", "_bv", "_bo", "_b1", "_b2")):
                assert np.all(v == 0.0), k
            if k.endswith("_g"):
                assert np.all(v == 1.0), k

    def test_trainable_count_matches_closed_form(self):
        cfg = toy_config()
        params = init_params(cfg, seed=1)
        actual = sum(v.size for k, v in params.items() if k not in FIXED_PARAMS)
        assert actual == expected_param_count(cfg)

    def test_weights_within_two_sigma(self):
        params = init_params(toy_config(), seed=2)
        assert np.abs(params["patch_proj_w"]).max() <= 0.04 + 1e-12

    def test_pos_embed_table_shape(self):
        table = sincos_pos_embed(16, 3, 5)
        assert table.shape == (15, 16)
        # distinct grid positions get distinct encodings
        assert len(np.unique(table.round(9), axis=0)) == 15


class TestClassify:
    def test_prob_vector(self):
        cfg = toy_config()
        params = init_params(cfg, seed=3)
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(8, 8, 3))
        probs = classify(params, cfg, img)
        assert probs.data.shape == (3,)
        assert abs(probs.data.sum() - 1.0) < 1e-6
        assert np.all(probs.data >= 0.0)

    def test_identical_images_identical_outputs(self):
        cfg = toy_config()
        params = init_params(cfg, seed=4)
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(8, 8, 3))
        batch = np.stack([img, img])
        probs = classify(params, cfg, batch)
        np.testing.assert_array_equal(probs.data[0], probs.data[1])

    def test_head_permutation_permutes_probs(self):
        cfg = toy_config()
        params = init_params(cfg, seed=5)
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(8, 8, 3))
        perm = np.array([2, 0, 1])
        permuted = dict(params)
        permuted["head_w"] = params["head_w"][:, perm]
        permuted["head_b"] = params["head_b"][perm]
        base = classify(params, cfg, img).data
        shuffled = classify(permuted, cfg, img).data
        np.testing.assert_allclose(shuffled, base[perm], rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        cfg = toy_config()
        params = init_params(cfg, seed=6)
        with pytest.raises(ShapeError):
            classify(params, cfg, np.zeros((16, 16, 3)))

    def test_classify_is_pooled_visible_encoding(self):
        from maskmatch.autodiff import softmax
        cfg = toy_config()
        params = init_params(cfg, seed=7)
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(8, 8, 3))
        patches = patchify(img, cfg.patch_size)
        consts = lift(params, requires_grad=False)
        encoded = encode_visible(consts, cfg, patches, np.arange(cfg.num_tokens))
        pooled = encoded.mean(axis=0)
        manual = softmax(pooled @ consts["head_w"] + consts["head_b"], axis=-1)
        np.testing.assert_array_equal(classify(params, cfg, img).data, manual.data)


class TestEncodeVisible:
    def test_output_lengths(self):
        cfg = toy_config(image_size=32)  # 64 tokens
        params = init_params(cfg, seed=8)
        rng = np.random.default_rng(4)
        patches = rng.uniform(size=(64, 48))
        full = encode_visible(params, cfg, patches, np.arange(64))
        assert full.data.shape == (64, 16)
        vis = np.sort(rng.permutation(64)[:45])
        partial = encode_visible(params, cfg, patches, vis)
        assert partial.data.shape == (45, 16)

    def test_empty_visible_set_rejected(self):
        cfg = toy_config()
        params = init_params(cfg, seed=9)
        with pytest.raises(ValueError):
            encode_visible(params, cfg, np.zeros((4, 48)), np.array([], dtype=int))

    def test_order_independence(self):
        cfg = toy_config(image_size=16)  # 16 tokens
        params = init_params(cfg, seed=10)
        rng = np.random.default_rng(5)
        patches = rng.uniform(size=(16, 48))
        idx = np.array([0, 3, 7, 9, 12])
        out = encode_visible(params, cfg, patches, idx).data
        perm = rng.permutation(len(idx))
        out_perm = encode_visible(params, cfg, patches, idx[perm]).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-6)


class TestDecodeFull:
    def test_full_token_count_out(self):
        cfg = toy_config(image_size=16)
        params = init_params(cfg, seed=11)
        rng = np.random.default_rng(6)
        patches = rng.uniform(size=(16, 48))
        for masked_count in (1, 8, 15):
            masked = np.arange(masked_count)
            visible = np.arange(masked_count, 16)
            enc = encode_visible(params, cfg, patches, visible)
            recon = decode_full(params, cfg, enc, visible, masked)
            assert recon.data.shape == (16, cfg.patch_dim)

    def test_cover_violations_rejected(self):
        cfg = toy_config()
        params = init_params(cfg, seed=12)
        rng = np.random.default_rng(7)
        patches = rng.uniform(size=(4, 48))
        enc = encode_visible(params, cfg, patches, np.array([0, 1]))
        with pytest.raises(ValueError):
            decode_full(params, cfg, enc, np.array([0, 1]), np.array([1, 3]))
        with pytest.raises(ValueError):
            decode_full(params, cfg, enc, np.array([0, 1]), np.array([3]))

    def test_mask_token_gradient_nonzero(self):
        cfg = toy_config()
        params = init_params(cfg, seed=13)
        rng = np.random.default_rng(8)
        patches = rng.uniform(size=(4, 48))
        visible, masked = np.array([0, 2]), np.array([1, 3])

        def loss_for(p):
            enc = encode_visible(p, cfg, patches, visible)
            recon = decode_full(p, cfg, enc, visible, masked)
            return (recon * recon).sum()

        tensors = lift(params)
        loss = loss_for(tensors)
        loss.backward()
        analytic = tensors["mask_token"].grad[0]

        h = 1e-6
        bumped = {k: v.copy() for k, v in params.items()}
        bumped["mask_token"][0] += h
        hi = float(loss_for(bumped).data)
        bumped["mask_token"][0] -= 2 * h
        lo = float(loss_for(bumped).data)
        numeric = (hi - lo) / (2 * h)
        assert abs(numeric) > 1e-8
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5)


class TestPredict:
    def test_batched_matches_single(self):
        cfg = toy_config()
        params = init_params(cfg, seed=14)
        rng = np.random.default_rng(9)
        images = rng.uniform(size=(5, 8, 8, 3))
        probs = predict_probs(params, cfg, images, chunk=2)
        assert probs.shape == (5, 3)
        single = classify(params, cfg, images[3]).data
        np.testing.assert_allclose(probs[3], single, rtol=1e-12)
