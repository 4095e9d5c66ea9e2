import numpy as np
import pytest

from caspianet import autodiff as ad
from caspianet.losses import total_loss
from caspianet.network import (
    NetConfig,
    build,
    checkpoint_bytes,
    clone,
    default_placement,
    model_from_bytes,
    poly_lr,
    sgd_step,
    variant_placement,
)


def small(**kw):
    base = dict(levels=2, base_channels=2, crop=8, seed=0)
    base.update(kw)
    return NetConfig(**base)


def conv(i, o, k):
    return o * i * k**3 + o


def caspian_params(c):
    spatial = 4 + 4 + 4 + 1
    return spatial + 2 * c * c + 2 * c


def caspian_pp_params(c, coarse):
    spatial = 13
    proj = c * coarse + c if coarse != c else 0
    return (2 * c * c + 2 * c) + 3 * spatial + 2 * spatial + proj


class TestConfig:
    def test_default_placement_layout(self):
        p = default_placement(3)
        assert p["enc1"] == "caspian" and p["enc2"] == p["enc3"] == "caspian_pp"
        assert p["bottleneck"] == "none"
        assert all(p[f"{s}{l}"] == "caspian" for s in ("skip", "dec") for l in (1, 2, 3))

    def test_rejects_multiscale_outside_encoder(self):
        with pytest.raises(ValueError, match="enc2"):
            small(placement={"dec1": "caspian_pp"})
        with pytest.raises(ValueError):
            small(placement={"enc1": "caspian_ms"})

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            NetConfig(levels=3, crop=12)
        with pytest.raises(ValueError):
            NetConfig(levels=1, crop=8)
        with pytest.raises(ValueError):
            small(placement={"bottleneck": "caspian"})

    def test_variant_aliases(self):
        assert set(variant_placement(2, "baseline").values()) == {"none"}
        assert variant_placement(2, "caspian+multiscale")["enc2"] == "caspian_ms"
        with pytest.raises(ValueError):
            variant_placement(2, "nonsense")


class TestModel:
    def test_parameter_count_is_analytic(self):
        model = build(small())
        c1, c2, c3 = 2, 4, 8
        want = (
            conv(4, c1, 3) + caspian_params(c1) + conv(c1, c1, 3)  # enc1
            + conv(c1, c2, 3) + caspian_pp_params(c2, c1) + conv(c2, c2, 3)  # enc2
            + conv(c2, c3, 3) + conv(c3, c3, 3)  # bottleneck
            + conv(c3, c2, 1) + caspian_params(c2)  # up2, skip2
            + conv(2 * c2, c2, 3) + caspian_params(c2) + conv(c2, c2, 3)  # dec2
            + conv(c2, c1, 1) + caspian_params(c1)  # up1, skip1
            + conv(2 * c1, c1, 3) + caspian_params(c1) + conv(c1, c1, 3)  # dec1
            + conv(c1, 3, 1)  # head
        )
        assert model.parameter_count() == want

    def test_baseline_count_has_no_attention(self):
        model = build(small(placement=variant_placement(2, "baseline")))
        assert model.attention_blocks() == {}

    def test_forward_shape_and_validation(self):
        model = build(small())
        x = np.random.default_rng(0).normal(size=(2, 4, 8, 8, 8))
        assert model.forward(x).shape == (2, 3, 8, 8, 8)
        with pytest.raises(ValueError):
            model.forward(np.zeros((1, 4, 16, 16, 16)))
        with pytest.raises(ValueError):
            model.forward(np.zeros((1, 3, 8, 8, 8)))

    def test_same_seed_same_weights(self):
        assert checkpoint_bytes(build(small())) == checkpoint_bytes(build(small()))
        assert checkpoint_bytes(build(small())) != checkpoint_bytes(build(small(seed=1)))

    def test_dropout_changes_training_output_only(self):
        model = build(small())
        x = np.random.default_rng(0).normal(size=(1, 4, 8, 8, 8))
        a = model.forward(x, training=False, dropout_rate=0.5).data
        b = model.forward(x, training=False).data
        c = model.forward(x, training=True, dropout_rate=0.5, rng=np.random.default_rng(1)).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("variant", ["se", "saam_only", "saam+caam", "caspian", "caspian+multiplanar", "caspian+multiscale"])
    def test_variants_run(self, variant):
        model = build(small(placement=variant_placement(2, variant)))
        x = np.random.default_rng(0).normal(size=(1, 4, 8, 8, 8))
        assert np.all(np.isfinite(model.forward(x).data))


class TestOptimisation:
    def test_poly_lr_endpoints(self):
        assert poly_lr(0, 100) == 1e-3
        assert poly_lr(100, 100) == 0.0
        assert poly_lr(50, 100) == pytest.approx(1e-3 * (1 - 0.5**0.9), abs=1e-18)

    def test_poly_lr_domain(self):
        with pytest.raises(ValueError):
            poly_lr(-1, 10)
        with pytest.raises(ValueError):
            poly_lr(11, 10)
        with pytest.raises(ValueError):
            poly_lr(0, 0)

    def test_sgd_step_needs_gradients(self):
        with pytest.raises(RuntimeError):
            sgd_step(build(small()), 1e-3)

    def test_sgd_momentum_update(self):
        model = build(small())
        p = model.parameters()[0]
        before = p.data.copy()
        for prm in model.parameters():
            prm.grad = np.ones_like(prm.data)
        sgd_step(model, 0.1, 0.9)
        np.testing.assert_allclose(p.data, before - 0.1)
        for prm in model.parameters():
            prm.grad = np.ones_like(prm.data)
        sgd_step(model, 0.1, 0.9)
        np.testing.assert_allclose(p.data, before - 0.1 - 0.1 * 1.9)

    def test_one_step_decreases_loss_for_some_lr(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 4, 8, 8, 8))
        t = (rng.random((2, 3, 8, 8, 8)) < 0.2).astype(float)
        base = build(small())
        start = total_loss(t, base.forward(x)).item()
        decreased = []
        for lr in (1e-2, 1e-3, 1e-4):
            m = clone(base)
            ad.backward(total_loss(t, m.forward(x)))
            sgd_step(m, lr, 0.9)
            decreased.append(total_loss(t, m.forward(x)).item() < start)
        assert any(decreased)


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self):
        model = build(small(seed=3))
        raw = checkpoint_bytes(model)
        again = model_from_bytes(raw)
        assert checkpoint_bytes(again) == raw
        assert again.config == model.config
        x = np.random.default_rng(0).normal(size=(1, 4, 8, 8, 8))
        np.testing.assert_array_equal(again.forward(x).data, model.forward(x).data)

    def test_corruption_is_rejected(self):
        raw = checkpoint_bytes(build(small()))
        with pytest.raises(ValueError, match="magic"):
            model_from_bytes(b"XXXXX" + raw[5:])
        with pytest.raises(ValueError, match="truncated"):
            model_from_bytes(raw[:-3])
        with pytest.raises(ValueError, match="trailing"):
            model_from_bytes(raw + b"\x00")

    def test_model_id_tracks_weights(self):
        a = build(small())
        b = clone(a)
        assert a.model_id() == b.model_id()
        b.parameters()[0].data[0, 0, 0, 0, 0] += 1.0
        assert a.model_id() != b.model_id()
