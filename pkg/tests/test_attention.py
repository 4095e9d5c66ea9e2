import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caspianet import attention as at
from caspianet.autodiff import Tensor
from caspianet.data import mirror

import oracles


def rand_params(kind, channels, rng):
    return at.ExcitationParams.create(kind, channels, rng)


def as_arrays(p):
    return (p.w1.data, p.b1.data, p.w2.data, p.b2.data)


def symmetric_volume(rng, shape, axis):
    return mirror(rng.normal(size=shape), axis)


class TestMasks:
    @pytest.mark.parametrize("plane", at.PLANES)
    def test_saam_matches_naive(self, plane):
        u = np.random.default_rng(plane).normal(size=(2, 3, 4, 5, 6))
        got = at.saam(Tensor(u), plane).data
        np.testing.assert_allclose(got, oracles.saam(u, plane), atol=1e-12)

    @pytest.mark.parametrize("plane", at.PLANES)
    def test_caam_matches_naive(self, plane):
        m = np.random.default_rng(10 + plane).normal(size=(2, 3, 4, 5, 6))
        np.testing.assert_allclose(at.caam(Tensor(m), plane).data, oracles.caam(m, plane), atol=1e-12)

    def test_saam_range_and_shape(self):
        u = np.random.default_rng(0).normal(size=(1, 4, 6, 6, 6))
        theta = at.saam(Tensor(u)).data
        assert theta.shape == (1, 1, 6, 6, 6)
        assert theta.min() >= -1e-12 and theta.max() <= 1 + 1e-12

    def test_saam_is_mirror_symmetric(self):
        u = np.random.default_rng(1).normal(size=(1, 3, 6, 4, 4))
        theta = at.saam(Tensor(u), at.SAGITTAL).data
        np.testing.assert_array_equal(theta, theta[:, :, ::-1])

    def test_antisymmetric_input_gives_full_asymmetry(self):
        u = np.random.default_rng(2).normal(size=(1, 3, 6, 4, 4))
        u = u - u[:, :, ::-1]
        np.testing.assert_allclose(at.saam(Tensor(u)).data, 1.0, atol=1e-12)

    def test_zero_volume_stays_finite(self):
        theta = at.saam(Tensor(np.zeros((1, 2, 4, 4, 4)))).data
        np.testing.assert_array_equal(theta, 0.5)
        assert np.all(np.isfinite(at.caam(Tensor(np.zeros((1, 2, 4, 4, 4)))).data))

    def test_bad_plane_and_rank(self):
        with pytest.raises(ValueError):
            at.saam(Tensor(np.ones((1, 1, 2, 2, 2))), 4)
        with pytest.raises(ValueError):
            at.saam(Tensor(np.ones((1, 2, 2, 2))))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(at.PLANES))
    def test_symmetric_input_gives_zero_mask(self, seed, plane):
        rng = np.random.default_rng(seed)
        u = symmetric_volume(rng, (1, 3, 4, 6, 4), plane + 1)
        assert np.abs(at.saam(Tensor(u), plane).data).max() <= 1e-9
        assert np.abs(at.caam(Tensor(u), plane).data).max() <= 1e-9


class TestExcitation:
    def test_spatial_matches_naive(self):
        rng = np.random.default_rng(0)
        p = rand_params("spatial", 1, rng)
        mask = rng.uniform(size=(2, 1, 3, 3, 3))
        got = at.excite(Tensor(mask), p).data
        np.testing.assert_allclose(got, oracles.excite_spatial(mask, as_arrays(p)), atol=1e-12)

    def test_channel_matches_naive(self):
        rng = np.random.default_rng(1)
        p = rand_params("channel", 5, rng)
        mask = rng.uniform(size=(3, 5))
        np.testing.assert_allclose(at.excite(Tensor(mask), p).data, oracles.excite_channel(mask, as_arrays(p)), atol=1e-12)

    def test_channel_excitation_has_no_bottleneck(self):
        p = rand_params("channel", 6, np.random.default_rng(0))
        assert p.w1.shape == (6, 6) and p.w2.shape == (6, 6)

    def test_kind_shape_mismatch(self):
        with pytest.raises(ValueError):
            at.excite(Tensor(np.ones((2, 3))), rand_params("spatial", 1, np.random.default_rng(0)))
        with pytest.raises(ValueError):
            at.ExcitationParams.create("other")

    def test_zero_params_give_half(self):
        out = at.excite(Tensor(np.random.default_rng(0).uniform(size=(2, 4))), at.ExcitationParams.zeros("channel", 4))
        np.testing.assert_array_equal(out.data, 0.5)


class TestComposites:
    def test_caspian_zero_excitation_is_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4, 4, 4))
        out = at.caspian(Tensor(x), at.ExcitationParams.zeros("spatial"), at.ExcitationParams.zeros("channel", 3))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_caspian_is_sum_of_branches(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 3, 4, 4, 4))
        sp, ch = rand_params("spatial", 1, rng), rand_params("channel", 3, rng)
        s = oracles.excite_spatial(oracles.saam(x), as_arrays(sp))
        c = oracles.excite_channel(oracles.caam(x), as_arrays(ch))
        want = s * x + c[:, :, None, None, None] * x
        np.testing.assert_allclose(at.caspian(Tensor(x), sp, ch).data, want, atol=1e-12)

    def test_multiplanar_sums_three_planes(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 2, 4, 4, 4))
        ps = [rand_params("spatial", 1, rng) for _ in at.PLANES]
        want = sum(oracles.excite_spatial(oracles.saam(x, pl), as_arrays(p)) * x for pl, p in zip(at.PLANES, ps))
        np.testing.assert_allclose(at.multiplanar(Tensor(x), ps).data, want, atol=1e-12)

    @pytest.mark.parametrize("with_proj", [False, True])
    def test_multiscale_matches_naive(self, with_proj):
        rng = np.random.default_rng(6)
        x1 = rng.normal(size=(2, 3, 3, 3, 3))
        x0 = rng.normal(size=(2, 2 if with_proj else 3, 6, 6, 6))
        p1, p0 = rand_params("spatial", 1, rng), rand_params("spatial", 1, rng)
        proj = (Tensor(rng.normal(size=(3, 2, 1, 1, 1))), Tensor(rng.normal(size=3))) if with_proj else None
        got = at.multiscale(Tensor(x1), Tensor(x0), p1, p0, at.SAGITTAL, proj).data
        want = oracles.multiscale(
            x1, x0, as_arrays(p1), as_arrays(p0), *((proj[0].data, proj[1].data) if proj else ())
        )
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_multiscale_rejects_misaligned_scales(self):
        p = at.ExcitationParams.zeros("spatial")
        with pytest.raises(ValueError, match="misaligned"):
            at.multiscale(Tensor(np.ones((1, 2, 4, 4, 4))), Tensor(np.ones((1, 2, 6, 6, 6))), p, p)
        with pytest.raises(ValueError, match="projection"):
            at.multiscale(Tensor(np.ones((1, 2, 2, 2, 2))), Tensor(np.ones((1, 3, 4, 4, 4))), p, p)

    def test_caspian_pp_decomposes(self):
        rng = np.random.default_rng(7)
        x1, x0 = rng.normal(size=(1, 2, 4, 4, 4)), rng.normal(size=(1, 2, 8, 8, 8))
        ch = rand_params("channel", 2, rng)
        planes = [rand_params("spatial", 1, rng) for _ in at.PLANES]
        m1, m0 = rand_params("spatial", 1, rng), rand_params("spatial", 1, rng)
        got = at.caspian_pp(Tensor(x1), Tensor(x0), ch, planes, m1, m0).data
        c = oracles.excite_channel(oracles.caam(x1), as_arrays(ch))
        want = (
            c[:, :, None, None, None] * x1
            + at.multiscale(Tensor(x1), Tensor(x0), m1, m0).data
            + at.multiplanar(Tensor(x1), planes).data
        )
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_se_baseline_matches_naive(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 4, 3, 3, 3))
        p = rand_params("channel", 4, rng)
        np.testing.assert_allclose(at.se_baseline(Tensor(x), p).data, oracles.se_baseline(x, as_arrays(p)), atol=1e-12)


class TestBlocks:
    @pytest.mark.parametrize("kind", at.BLOCK_KINDS)
    def test_blocks_preserve_shape(self, kind):
        rng = np.random.default_rng(0)
        block = at.make_block(kind, 4, rng, coarse_channels=2)
        x = Tensor(rng.normal(size=(1, 4, 4, 4, 4)))
        x0 = Tensor(rng.normal(size=(1, 2, 8, 8, 8)))
        assert block(x, x0 if block.needs_coarse else None).shape == x.shape

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            at.make_block("bogus", 4, np.random.default_rng(0))

    def test_multiscale_block_needs_coarse_input(self):
        block = at.make_block("caspian_pp", 4, np.random.default_rng(0), coarse_channels=2)
        with pytest.raises(ValueError):
            block(Tensor(np.ones((1, 4, 4, 4, 4))))

    def test_blocks_record_spatial_mask(self):
        block = at.make_block("caspian", 3, np.random.default_rng(0))
        block(Tensor(np.random.default_rng(1).normal(size=(1, 3, 4, 4, 4))))
        assert block.last_spatial.shape == (1, 1, 4, 4, 4)
