import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caspianet.data import (
    AugmentConfig,
    Case,
    PhantomSpec,
    basic_augment,
    centroid_crop,
    copy_paste,
    decode_cvol,
    encode_cvol,
    gen_phantom,
    list_cases,
    load_dataset,
    mixup,
    save_case,
    zscore,
)


class TestCvol:
    def test_header_layout(self):
        raw = encode_cvol(np.zeros((2, 3), np.uint8))
        assert raw[:6] == b"CVOL1\x00" and raw[6] == 1 and raw[7] == 2
        assert int.from_bytes(raw[8:12], "little") == 2 and int.from_bytes(raw[12:16], "little") == 3
        assert len(raw) == 16 + 6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.lists(st.integers(1, 5), min_size=1, max_size=4))
    def test_float_round_trip(self, seed, shape):
        a = np.random.default_rng(seed).normal(size=shape).astype(np.float32).astype(np.float64)
        raw = encode_cvol(a)
        b = decode_cvol(raw)
        assert b.dtype == np.float64
        np.testing.assert_array_equal(a, b)
        assert encode_cvol(b) == raw

    def test_corrupt_inputs(self):
        raw = encode_cvol(np.ones((2, 2), np.float32))
        with pytest.raises(ValueError, match="magic"):
            decode_cvol(b"NOPE" + raw[4:])
        with pytest.raises(ValueError, match="dtype"):
            decode_cvol(raw[:6] + b"\x07" + raw[7:])
        with pytest.raises(ValueError):
            decode_cvol(raw[:-1])
        with pytest.raises(ValueError):
            encode_cvol(np.ones(3, np.int64))
        with pytest.raises(ValueError):
            encode_cvol(np.array([np.nan]))


class TestPhantoms:
    def test_deterministic(self):
        a = gen_phantom(PhantomSpec(seed=5))
        b = gen_phantom(PhantomSpec(seed=5))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    @pytest.mark.parametrize("seed", range(6))
    def test_background_symmetric_and_lesion_one_sided(self, seed):
        image, label = gen_phantom(PhantomSpec(seed=seed))
        lesion = label > 0
        mirrored = lesion[::-1]
        assert lesion.any() and not (lesion & mirrored).any()
        outside = ~(lesion | mirrored)
        np.testing.assert_array_equal(image[:, outside], image[:, ::-1][:, outside])

    def test_labels_nested(self):
        _, label = gen_phantom(PhantomSpec(seed=1))
        assert set(np.unique(label)) == {0, 1, 2, 4}
        et, tc, wt = (np.argwhere(np.isin(label, v)) for v in ((4,), (1, 4), (1, 2, 4)))
        # ET sits inside TC's bounding box, TC inside WT's
        for inner, outer in ((et, tc), (tc, wt)):
            assert np.all(inner.min(0) >= outer.min(0)) and np.all(inner.max(0) <= outer.max(0))
        assert (label == 2).sum() > (label == 1).sum() > 0

    def test_float32_exact(self):
        image, _ = gen_phantom(PhantomSpec(seed=2))
        np.testing.assert_array_equal(image, image.astype(np.float32).astype(np.float64))

    def test_lesion_free_phantom_is_fully_symmetric(self):
        image, label = gen_phantom(PhantomSpec(seed=3, lesions=0))
        assert not label.any()
        np.testing.assert_array_equal(image, image[:, ::-1])

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            gen_phantom(PhantomSpec(core_radius=(8.0, 9.0)))
        with pytest.raises(ValueError):
            gen_phantom(PhantomSpec(extent=4))


class TestDatasets:
    def test_save_and_load(self, tmp_path):
        image, label = gen_phantom(PhantomSpec(extent=16, edema_radius=(2.5, 3.5), core_radius=(1.5, 2.0),
                                               enhancing_radius=(0.8, 1.2), seed=0))
        save_case(tmp_path, Case("a", image, label))
        save_case(tmp_path, Case("b", image))
        assert list_cases(tmp_path) == ["a", "b"]
        cases = load_dataset(tmp_path)
        np.testing.assert_array_equal(cases[0].image, image)
        np.testing.assert_array_equal(cases[0].label, label)
        assert cases[1].label is None

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list_cases(tmp_path / "nope")

    def test_case_validation(self):
        with pytest.raises(ValueError):
            Case("x", np.zeros((4, 8, 8, 8)), np.full((8, 8, 8), 3, np.uint8))
        with pytest.raises(ValueError):
            Case("x", np.zeros((8, 8, 8)))

    def test_zscore(self):
        img = np.random.default_rng(0).normal(5, 3, size=(2, 4, 4, 4))
        img[1] = 7.0
        z = zscore(img)
        assert abs(z[0].mean()) < 1e-12 and abs(z[0].std() - 1) < 1e-12
        np.testing.assert_array_equal(z[1], 0.0)


class TestAugment:
    def setup_method(self):
        self.image, self.label = gen_phantom(PhantomSpec(seed=4))

    def test_centroid_crop_contains_lesion_centre(self):
        img, lab = centroid_crop(self.image, self.label, 16, np.random.default_rng(0), jitter=False)
        assert img.shape == (4, 16, 16, 16) and lab.shape == (16, 16, 16)
        assert lab.any()

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            centroid_crop(self.image, self.label, 64, np.random.default_rng(0))

    def test_basic_augment_keeps_alignment(self):
        cfg = AugmentConfig(scale_range=(1.0, 1.0), shift_range=(0.0, 0.0))
        # mark label voxels in the image so alignment can be checked after flips/rotations
        marked = self.image.copy()
        marked[0] = (self.label > 0).astype(float)
        img, lab = basic_augment(marked, self.label, cfg, np.random.default_rng(3))
        np.testing.assert_array_equal(img[0] > 0.5, lab > 0)

    def test_identity_augment(self):
        img, lab = basic_augment(self.image, self.label, AugmentConfig.identity(32), np.random.default_rng(0))
        np.testing.assert_array_equal(img, self.image)
        np.testing.assert_array_equal(lab, self.label)

    def test_mixup_is_convex(self):
        a = (np.zeros((2, 4)), np.zeros((3, 4)))
        b = (np.ones((2, 4)), np.ones((3, 4)))
        img, tgt = mixup(a, b, 0.2, np.random.default_rng(0), lam=0.25)
        np.testing.assert_allclose(img, 0.75)
        np.testing.assert_allclose(tgt, 0.75)
        with pytest.raises(ValueError):
            mixup(a, (np.ones((2, 5)), np.ones((3, 4))), 0.2, np.random.default_rng(0))

    def test_copy_paste_transfers_lesion(self):
        donor = (self.image, self.label)
        rec_img, rec_lab = gen_phantom(PhantomSpec(seed=9, lesions=0))
        img, lab = copy_paste(donor, (rec_img, rec_lab), np.random.default_rng(1))
        src, dst = np.argwhere(self.label > 0), np.argwhere(lab > 0)
        assert len(src) == len(dst)
        offset = dst[0] - src[0]
        np.testing.assert_array_equal(dst - src, np.broadcast_to(offset, src.shape))
        np.testing.assert_array_equal(lab[tuple(dst.T)], self.label[tuple(src.T)])
        np.testing.assert_array_equal(img[:, dst[:, 0], dst[:, 1], dst[:, 2]], self.image[:, src[:, 0], src[:, 1], src[:, 2]])
        pasted = lab > 0
        np.testing.assert_array_equal(img[:, ~pasted], rec_img[:, ~pasted])

    def test_augment_config_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(flip_prob=(2.0, 0, 0)).validate()
        with pytest.raises(ValueError):
            AugmentConfig(rot_planes=((0, 0),)).validate()
