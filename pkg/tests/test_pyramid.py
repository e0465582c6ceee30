import numpy as np
import pytest
import torch

from laploss import pyramid

from conftest import to_numpy, to_tensor
from oracles import (
    blur_oracle,
    decompose_oracle,
    downsample_oracle,
    reconstruct_oracle,
    upsample_oracle,
)


def rand_image(rng, h, w, c=3):
    return rng.uniform(0.0, 1.0, size=(h, w, c)).astype(np.float32)


class TestGaussianBlur:
    def test_preserves_constants(self):
        img = torch.full((1, 3, 8, 8), 0.37)
        out = pyramid.gaussian_blur(img)
        assert torch.allclose(out, img, atol=1e-7)

    def test_zeros(self):
        out = pyramid.gaussian_blur(torch.zeros(1, 3, 6, 6))
        assert torch.count_nonzero(out) == 0

    def test_impulse_center_weight(self):
        # Center of the 2-D separable kernel: (6/16)^2 = 36/256.
        img = torch.zeros(1, 1, 5, 5)
        img[0, 0, 2, 2] = 1.0
        out = pyramid.gaussian_blur(img)
        assert abs(out[0, 0, 2, 2].item() - 36.0 / 256.0) < 1e-7

    def test_matches_oracle(self, rng):
        img = rand_image(rng, 8, 8)
        out = to_numpy(pyramid.gaussian_blur(to_tensor(img)))
        np.testing.assert_allclose(out, blur_oracle(img), atol=1e-6)

    def test_range_contraction(self, rng):
        img = rand_image(rng, 12, 12)
        out = to_numpy(pyramid.gaussian_blur(to_tensor(img)))
        assert out.min() >= img.min() - 1e-6
        assert out.max() <= img.max() + 1e-6

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            pyramid.gaussian_blur(torch.zeros(3, 8, 8))


class TestDownsample:
    def test_constant(self):
        img = torch.full((1, 3, 4, 4), 0.6)
        out = pyramid.downsample(img)
        assert out.shape == (1, 3, 2, 2)
        assert torch.allclose(out, torch.full((1, 3, 2, 2), 0.6), atol=1e-7)

    def test_paper_scale_shape(self):
        out = pyramid.downsample(torch.zeros(1, 3, 608, 896))
        assert out.shape == (1, 3, 304, 448)

    def test_matches_oracle(self, rng):
        img = rand_image(rng, 8, 8)
        out = to_numpy(pyramid.downsample(to_tensor(img)))
        np.testing.assert_allclose(out, downsample_oracle(img), atol=1e-6)

    def test_rejects_odd_dims(self):
        with pytest.raises(ValueError):
            pyramid.downsample(torch.zeros(1, 3, 7, 8))


class TestUpsample:
    def test_constant(self):
        img = torch.full((1, 3, 2, 2), 0.25)
        out = pyramid.upsample(img)
        assert out.shape == (1, 3, 4, 4)
        assert torch.allclose(out, torch.full((1, 3, 4, 4), 0.25), atol=1e-7)

    def test_zeros(self):
        out = pyramid.upsample(torch.zeros(1, 3, 4, 4))
        assert torch.count_nonzero(out) == 0

    def test_matches_oracle(self, rng):
        img = rand_image(rng, 4, 4)
        out = to_numpy(pyramid.upsample(to_tensor(img)))
        np.testing.assert_allclose(out, upsample_oracle(img), atol=1e-6)


class TestDecompose:
    def test_constant_kills_bands(self):
        img = torch.full((1, 3, 16, 16), 0.5)
        levels = pyramid.decompose(img, 3)
        assert torch.allclose(levels[0], torch.full_like(levels[0], 0.5), atol=1e-6)
        for band in levels[1:]:
            assert band.abs().max().item() <= 1e-6

    def test_level_shapes_paper_scale(self):
        levels = pyramid.decompose(torch.zeros(1, 3, 608, 896), 3)
        assert [tuple(l.shape[-2:]) for l in levels] == [(152, 224), (304, 448), (608, 896)]
        assert pyramid.level_shapes(608, 896, 3) == [(152, 224), (304, 448), (608, 896)]

    def test_matches_step_by_step_oracle(self, rng):
        img = rand_image(rng, 16, 16)
        levels = pyramid.decompose(to_tensor(img), 3)
        expect = decompose_oracle(img, 3)
        assert len(levels) == len(expect)
        for got, exp in zip(levels, expect):
            np.testing.assert_allclose(to_numpy(got), exp, atol=1e-5)

    def test_rejects_non_divisible(self):
        with pytest.raises(ValueError):
            pyramid.decompose(torch.zeros(1, 3, 18, 16), 3)

    def test_rejects_level_count_below_two(self):
        with pytest.raises(ValueError):
            pyramid.decompose(torch.zeros(1, 3, 16, 16), 1)


class TestReconstruct:
    def test_round_trip(self, rng):
        img = to_tensor(rand_image(rng, 32, 32))
        out = pyramid.reconstruct(pyramid.decompose(img, 3))
        assert (out - img).abs().max().item() <= 1e-5

    def test_constant_residual_zero_bands(self):
        levels = [
            torch.full((1, 3, 4, 4), 0.7),
            torch.zeros(1, 3, 8, 8),
            torch.zeros(1, 3, 16, 16),
        ]
        out = pyramid.reconstruct(levels)
        assert torch.allclose(out, torch.full((1, 3, 16, 16), 0.7), atol=1e-6)

    def test_matches_fold_oracle(self, rng):
        levels_np = [rand_image(rng, 4, 4), rand_image(rng, 8, 8), rand_image(rng, 16, 16)]
        out = to_numpy(pyramid.reconstruct([to_tensor(l) for l in levels_np]))
        np.testing.assert_allclose(out, reconstruct_oracle(levels_np), atol=1e-5)

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ValueError):
            pyramid.reconstruct([torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 12, 12)])


class TestProperties:
    def test_round_trip_many_sizes_and_levels(self, rng):
        for levels in (2, 3, 4):
            for h, w in ((16, 16), (32, 48), (96, 64)):
                img = to_tensor(rand_image(rng, h, w))
                out = pyramid.reconstruct(pyramid.decompose(img, levels))
                assert (out - img).abs().max().item() <= 1e-5, (levels, h, w)

    def test_linearity(self, rng):
        a, b = 0.7, -0.4
        i = to_tensor(rand_image(rng, 16, 16))
        j = to_tensor(rand_image(rng, 16, 16))
        lhs = pyramid.decompose(a * i + b * j, 3)
        pi = pyramid.decompose(i, 3)
        pj = pyramid.decompose(j, 3)
        for l, li, lj in zip(lhs, pi, pj):
            assert (l - (a * li + b * lj)).abs().max().item() <= 1e-5

    def test_shape_contract(self, rng):
        for levels in (2, 3, 4):
            img = to_tensor(rand_image(rng, 64, 32))
            got = [tuple(l.shape[-2:]) for l in pyramid.decompose(img, levels)]
            assert got == pyramid.level_shapes(64, 32, levels)

    def test_inputs_not_mutated(self, rng):
        img = to_tensor(rand_image(rng, 16, 16))
        copy = img.clone()
        pyramid.decompose(img, 3)
        pyramid.gaussian_blur(img)
        assert torch.equal(img, copy)

    def test_batched_matches_per_item(self, rng):
        imgs = [rand_image(rng, 16, 16) for _ in range(3)]
        batch = torch.cat([to_tensor(i) for i in imgs], dim=0)
        batched = pyramid.decompose(batch, 3)
        for n, img in enumerate(imgs):
            single = pyramid.decompose(to_tensor(img), 3)
            for lb, ls in zip(batched, single):
                assert torch.allclose(lb[n : n + 1], ls, atol=1e-7)
