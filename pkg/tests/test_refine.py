import numpy as np
import pytest
import torch
from scipy import ndimage

from driveseg import ConfigError, ShapeError
from driveseg.refine import (BoundaryRefiner, RbrmSpec, _boundary_pixels,
                             boundary_error_map)


class TestBoundaryRefiner:
    def test_identity_at_initialization(self):
        refiner = BoundaryRefiner(RbrmSpec()).double().eval()
        coarse = torch.randn(1, 1, 64, 64, dtype=torch.float64)
        with torch.no_grad():
            refined = refiner(coarse)
        assert torch.equal(refined, coarse)

    def test_bottleneck_and_output_shape(self):
        refiner = BoundaryRefiner(RbrmSpec(depth=4)).eval()
        coarse = torch.randn(1, 1, 512, 512)
        feats = []
        handle = refiner.encoder[-1].register_forward_hook(
            lambda m, i, o: feats.append(tuple(o.shape[-2:])))
        with torch.no_grad():
            refined = refiner(coarse)
        handle.remove()
        assert feats == [(32, 32)]
        assert refined.shape == (1, 1, 512, 512)

    def test_indivisible_input_rejected(self):
        refiner = BoundaryRefiner(RbrmSpec(depth=4))
        with pytest.raises(ShapeError, match="divisible"):
            refiner(torch.randn(1, 1, 40, 40))  # 40 % 2^4 != 0

    def test_divisible_non_multiple_of_32_accepted(self):
        # 48 = 3 * 16 satisfies the 2^depth requirement on its own
        refiner = BoundaryRefiner(RbrmSpec(depth=4)).eval()
        with torch.no_grad():
            out = refiner(torch.randn(1, 1, 48, 48))
        assert out.shape == (1, 1, 48, 48)

    @pytest.mark.parametrize("size", [(32, 32), (64, 96), (128, 64)])
    def test_resolution_equivariant_shape(self, size):
        refiner = BoundaryRefiner(RbrmSpec()).eval()
        with torch.no_grad():
            out = refiner(torch.randn(1, 1, *size))
        assert tuple(out.shape[-2:]) == size

    def test_nonzero_residual_after_perturbing_head(self):
        refiner = BoundaryRefiner(RbrmSpec()).eval()
        with torch.no_grad():
            refiner.head.weight.fill_(0.1)
            refiner.head.bias.fill_(0.05)
            coarse = torch.randn(1, 1, 32, 32)
            refined = refiner(coarse)
        assert not torch.equal(refined, coarse)

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            RbrmSpec(depth=0)
        with pytest.raises(ConfigError):
            RbrmSpec(base_channels=0)


def disk_mask(size=16, radius=5):
    yy, xx = np.mgrid[:size, :size]
    return (((yy - size / 2) ** 2 + (xx - size / 2) ** 2) <= radius ** 2) \
        .astype(np.uint8)


def chebyshev_within_oracle(mask, radius):
    """Brute-force: pixels within Chebyshev distance of any boundary pixel."""
    boundary = _boundary_pixels(mask.astype(bool))
    coords = np.argwhere(boundary)
    near = np.zeros_like(boundary)
    for i in range(mask.shape[0]):
        for j in range(mask.shape[1]):
            for bi, bj in coords:
                if max(abs(i - bi), abs(j - bj)) <= radius:
                    near[i, j] = True
                    break
    return near


class TestBoundaryErrorMap:
    def test_perfect_prediction_is_zero(self):
        gt = disk_mask()
        assert boundary_error_map(gt, gt, radius=2) == 0.0

    def test_dilated_prediction_all_errors_near_boundary(self):
        gt = disk_mask()
        pred = ndimage.binary_dilation(gt).astype(np.uint8)
        assert boundary_error_map(pred, gt, radius=1) == 1.0

    def test_inverted_prediction_equals_band_fraction(self):
        gt = disk_mask()
        pred = 1 - gt
        near = chebyshev_within_oracle(gt, radius=2)
        expected = near.sum() / gt.size
        assert boundary_error_map(pred, gt, radius=2) == pytest.approx(expected)

    def test_matches_oracle_on_random_masks(self, rng):
        for _ in range(20):
            gt = (rng.random((12, 12)) < 0.5).astype(np.uint8)
            pred = (rng.random((12, 12)) < 0.5).astype(np.uint8)
            errors = pred != gt
            if not errors.any():
                continue
            near = chebyshev_within_oracle(gt, radius=2)
            expected = (errors & near).sum() / errors.sum()
            assert boundary_error_map(pred, gt, 2) == pytest.approx(expected)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            boundary_error_map(np.zeros((4, 4)), np.zeros((4, 5)), 1)

    def test_bad_radius_rejected(self):
        with pytest.raises(ConfigError):
            boundary_error_map(np.zeros((4, 4)), np.ones((4, 4)), 0)

    def test_boundary_pixels_definition(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1:3, 1:3] = True
        boundary = _boundary_pixels(mask)
        # every in-square pixel touches an outside 4-neighbor and vice versa
        assert boundary[1, 1] and boundary[0, 1] and boundary[1, 0]
        assert not boundary[0, 0]  # diagonal-only contact does not count
        assert not boundary[3, 3]
