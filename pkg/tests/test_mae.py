"""Tests for masking plans, patch normalization, and the reconstruction loss."""

import math

import numpy as np
import pytest

from maskmatch.autodiff import Tensor
from maskmatch.errors import ShapeError
from maskmatch.mae import (
    MaskingPlan,
    NORM_EPSILON,
    mae_forward,
    mae_loss,
    make_masking_plan,
    masked_count,
    normalize_patch,
)
from maskmatch.model import init_params, lift
from test_model import toy_config


def reference_count(num_tokens, ratio):
    # independent restatement: nearest integer, clamped into [1, N-1]
    return min(max(int(math.floor(ratio * num_tokens + 0.5)), 1), num_tokens - 1)


class TestMaskingPlan:
    @pytest.mark.parametrize("ratio", [0.15, 0.3, 0.5, 0.7])
    @pytest.mark.parametrize("num_tokens", [4, 64, 196])
    def test_masked_count_grid(self, num_tokens, ratio):
        assert masked_count(num_tokens, ratio) == reference_count(num_tokens, ratio)

    def test_default_ratio_on_64_tokens(self):
        assert masked_count(64, 0.3) == 19

    def test_clamp_floor(self):
        plan = make_masking_plan(2, 0.01, np.random.default_rng(0))
        assert len(plan.masked) == 1

    def test_clamp_ceiling(self):
        plan = make_masking_plan(4, 0.99, np.random.default_rng(1))
        assert len(plan.masked) == 3

    def test_plan_structure_and_determinism(self):
        a = make_masking_plan(16, 0.5, np.random.default_rng(7))
        b = make_masking_plan(16, 0.5, np.random.default_rng(7))
        np.testing.assert_array_equal(a.masked, b.masked)
        assert len(np.unique(a.masked)) == 8
        assert np.all(np.diff(a.masked) > 0)
        assert set(a.visible) == set(range(16)) - set(a.masked)

    def test_invalid_inputs_rejected(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            make_masking_plan(1, 0.5, rng)
        with pytest.raises(ValueError):
            make_masking_plan(8, 0.0, rng)
        with pytest.raises(ValueError):
            make_masking_plan(8, 1.0, rng)

    def test_uniform_coverage(self):
        # each of 10 indices should be masked in about half of 100k plans
        rng = np.random.default_rng(3)
        hits = np.zeros(10, dtype=np.int64)
        trials = 100_000
        for _ in range(trials):
            hits[rng.choice(10, size=5, replace=False)] += 1
        freq = hits / trials
        assert np.all(np.abs(freq - 0.5) < 0.01)

    def test_plan_sampler_uniformity(self):
        rng = np.random.default_rng(4)
        hits = np.zeros(10, dtype=np.int64)
        trials = 20_000
        for _ in range(trials):
            hits[make_masking_plan(10, 0.5, rng).masked] += 1
        assert np.all(np.abs(hits / trials - 0.5) < 0.02)


class TestNormalizePatch:
    def test_two_value_patch(self):
        out = normalize_patch(np.array([1.0, 3.0]))
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-5)
        expected = (np.array([1.0, 3.0]) - 2.0) / (1.0 + NORM_EPSILON)
        np.testing.assert_array_equal(out, expected)

    def test_constant_patch_is_zeroed(self):
        np.testing.assert_array_equal(normalize_patch([0.5, 0.5, 0.5]), 0.0)

    def test_zero_mean_property(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            patch = rng.uniform(size=rng.integers(2, 64))
            assert abs(normalize_patch(patch).mean()) < 1e-6


class TestMaeLoss:
    def plan(self, masked, n):
        return MaskingPlan(masked=np.asarray(masked), num_tokens=n, ratio=0.5)

    def test_perfect_reconstruction_is_zero(self):
        rng = np.random.default_rng(6)
        target = rng.uniform(size=(8, 12))
        assert mae_loss(target, target.copy(), self.plan([1, 4, 6], 8)) == 0.0

    def test_hand_case_unnormalized(self):
        target = np.array([[1.0, 3.0], [9.0, 9.0]])
        recon = np.zeros((2, 2))
        loss = mae_loss(target, recon, self.plan([0], 2), normalize=False)
        assert abs(loss - 5.0) <= 1e-9

    def test_hand_case_normalized(self):
        target = np.array([[1.0, 3.0], [9.0, 9.0]])
        recon = np.zeros((2, 2))
        loss = mae_loss(target, recon, self.plan([0], 2), normalize=True)
        normed = (np.array([1.0, 3.0]) - 2.0) / (1.0 + NORM_EPSILON)
        expected = float(np.mean(normed ** 2))
        assert abs(loss - expected) <= 1e-9
        assert abs(loss - 1.0) <= 1e-5

    def test_unmasked_positions_never_contribute(self):
        rng = np.random.default_rng(7)
        target = rng.uniform(size=(6, 4))
        recon = rng.uniform(size=(6, 4))
        plan = self.plan([2, 5], 6)
        base = mae_loss(target, recon, plan)
        tweaked = recon.copy()
        tweaked[[0, 1, 3, 4]] += rng.uniform(1.0, 5.0, size=(4, 4))
        assert mae_loss(target, tweaked, plan) == base

    def test_mismatched_shapes_rejected(self):
        with pytest.raises(ShapeError):
            mae_loss(np.zeros((4, 3)), np.zeros((4, 2)), self.plan([0], 4))
        with pytest.raises(ShapeError):
            mae_loss(np.zeros((3, 2)), np.zeros((3, 2)), self.plan([0], 4))

    def test_tensor_path_matches_numpy_path(self):
        rng = np.random.default_rng(8)
        target = rng.uniform(size=(5, 6))
        recon = rng.uniform(size=(5, 6))
        plan = self.plan([0, 3], 5)
        as_float = mae_loss(target, recon, plan)
        as_tensor = mae_loss(target, Tensor(recon), plan)
        np.testing.assert_allclose(float(as_tensor.data), as_float, rtol=1e-15)


class TestMaeForward:
    def setup_method(self):
        self.cfg = toy_config()
        self.params = init_params(self.cfg, seed=20)

    def rngs(self, seeds):
        return [np.random.default_rng(s) for s in seeds]

    def test_loss_positive_and_finite(self):
        rng = np.random.default_rng(9)
        images = rng.uniform(size=(4, 8, 8, 3))
        loss = mae_forward(self.params, self.cfg, images, 0.5, False,
                           self.rngs([1, 2, 3, 4]))
        assert np.isfinite(loss.data) and loss.data > 0.0

    def test_order_invariance_with_per_image_seeds(self):
        rng = np.random.default_rng(10)
        images = rng.uniform(size=(5, 8, 8, 3))
        seeds = [11, 12, 13, 14, 15]
        base = float(mae_forward(self.params, self.cfg, images, 0.5, False,
                                 self.rngs(seeds)).data)
        perm = [3, 0, 4, 1, 2]
        shuffled = float(mae_forward(self.params, self.cfg, images[perm], 0.5, False,
                                     self.rngs([seeds[i] for i in perm])).data)
        np.testing.assert_allclose(shuffled, base, rtol=1e-12)

    def test_gradients_reach_decoder_and_mask_token(self):
        rng = np.random.default_rng(11)
        images = rng.uniform(size=(2, 8, 8, 3))
        tensors = lift(self.params)
        loss = mae_forward(tensors, self.cfg, images, 0.5, False, self.rngs([5, 6]))
        loss.backward()
        assert np.abs(tensors["mask_token"].grad).max() > 0.0
        assert np.abs(tensors["recon_w"].grad).max() > 0.0
        assert np.abs(tensors["patch_proj_w"].grad).max() > 0.0
        assert tensors["enc_pos_embed"].grad is None

    def test_normalize_flag_changes_targets_not_inputs(self):
        rng = np.random.default_rng(12)
        images = rng.uniform(size=(3, 8, 8, 3))
        a = float(mae_forward(self.params, self.cfg, images, 0.5, False,
                              self.rngs([7, 8, 9])).data)
        b = float(mae_forward(self.params, self.cfg, images, 0.5, True,
                              self.rngs([7, 8, 9])).data)
        assert a != b

    def test_generator_count_mismatch_rejected(self):
        rng = np.random.default_rng(13)
        images = rng.uniform(size=(3, 8, 8, 3))
        with pytest.raises(ShapeError):
            mae_forward(self.params, self.cfg, images, 0.5, False, self.rngs([1, 2]))
