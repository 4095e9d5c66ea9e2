import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caspianet import autodiff as ad
from caspianet.autodiff import Tensor
from caspianet.losses import bce, dice_loss, loss_terms, region_masks, to_regions, total_loss


class TestRegions:
    def test_nesting(self):
        labels = np.array([0, 1, 2, 4], dtype=np.uint8)
        r = region_masks(labels)
        np.testing.assert_array_equal(r[0], [0, 1, 1, 1])  # WT
        np.testing.assert_array_equal(r[1], [0, 1, 0, 1])  # TC
        np.testing.assert_array_equal(r[2], [0, 0, 0, 1])  # ET

    def test_invalid_label(self):
        with pytest.raises(ValueError, match="3"):
            region_masks(np.array([0, 3]))

    def test_to_regions_batches(self):
        t = to_regions(np.zeros((2, 4, 4, 4), dtype=np.uint8))
        assert t.stack().shape == (2, 3, 4, 4, 4)
        assert to_regions(np.zeros((4, 4, 4), dtype=np.uint8)).wt.shape == (1, 1, 4, 4, 4)


class TestTerms:
    def test_bce_matches_probability_form(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=50)
        g = (rng.random(50) < 0.5).astype(float)
        p = 1 / (1 + np.exp(-x))
        want = -np.mean(g * np.log(p) + (1 - g) * np.log(1 - p))
        assert bce(g, Tensor(x)).item() == pytest.approx(want, rel=1e-12)

    def test_dice_formula(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 4, 4, 4))
        g = (rng.random(x.shape) < 0.3).astype(float)
        p = 1 / (1 + np.exp(-x))
        want = 1 - (2 * (g * p).sum() + 1) / (g.sum() + p.sum() + 1)
        assert dice_loss(g, Tensor(x)).item() == pytest.approx(want, rel=1e-12)

    def test_saturated_dice_is_near_zero(self):
        g = (np.random.default_rng(2).random((8, 8, 8)) < 0.3).astype(float)
        assert dice_loss(g, Tensor((2 * g - 1) * 40.0)).item() < 1e-3

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce(np.zeros(3), Tensor(np.zeros(4)))
        with pytest.raises(ValueError):
            total_loss(np.zeros((1, 2, 4, 4, 4)), Tensor(np.zeros((1, 2, 4, 4, 4))))

    def test_total_is_sum_of_six_terms(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 3, 4, 4, 4)))
        t = (rng.random(x.shape) < 0.3).astype(float)
        terms = loss_terms(t, x)
        assert [(r, k) for r, k, _ in terms] == [(r, k) for r in ("WT", "TC", "ET") for k in ("bce", "dice")]
        acc = 0.0
        for _, _, v in terms:
            acc = acc + v.item()
        assert total_loss(t, x).item() == acc

    def test_gradient_flows_to_all_channels(self):
        x = Tensor(np.zeros((1, 3, 4, 4, 4)), requires_grad=True)
        ad.backward(total_loss(np.ones((1, 3, 4, 4, 4)), x))
        assert np.all(np.abs(x.grad).sum(axis=(2, 3, 4)) > 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 100_000))
    def test_total_loss_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(0, 5, size=(1, 3, 4, 4, 4)))
        t = rng.random(x.shape)  # soft targets as after MixUp
        assert total_loss(t, x).item() >= 0.0
