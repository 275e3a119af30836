import numpy as np
import pytest

from oracles import central_difference
from ocgan import ops
from ocgan.networks import (
    DiscriminatorSpec,
    UNetSpec,
    build_discriminator,
    build_unet,
    discriminator_forward,
    discriminator_param_count,
    generator_forward,
    unet_param_count,
)
from ocgan.tensor import FLOAT64, Tensor, backward


def image(rng, n=1, size=64, dtype=np.float32):
    return Tensor(rng.uniform(-1, 1, (n, 3, size, size)).astype(dtype))


class TestUNetSpec:
    def test_widths_and_skip_junctions(self):
        spec = UNetSpec(base_width=16, depth=3)
        assert spec.encoder_widths == [16, 32, 64]
        assert spec.decoder_inputs() == [(64, 32), (32, 16)]

    def test_wiring_consumes_those_junctions(self):
        _, params = build_unet(UNetSpec(base_width=16, depth=3), seed=0)
        assert params["dec0.weight"].shape[0] == 64 + 32
        assert params["out.weight"].shape[0] == 32 + 16

    @pytest.mark.parametrize("spec", [UNetSpec(), UNetSpec(base_width=8, depth=2), UNetSpec(base_width=4, depth=5)])
    def test_param_count_formula(self, spec):
        _, params = build_unet(spec, seed=1)
        assert sum(p.size for p in params.values()) == unet_param_count(spec)

    def test_param_count_values(self):
        # worked by hand from the formula in the networks docstring
        # enc0, enc1, enc2, dec1, dec0, out
        assert unet_param_count(UNetSpec(base_width=16, depth=3)) == 784 + 8288 + 32960 + 65728 + 49248 + 2307
        # enc0, enc1, dec0, out
        assert unet_param_count(UNetSpec(base_width=8, depth=2)) == 392 + 2096 + 4144 + 1155

    def test_invalid(self):
        with pytest.raises(ValueError):
            UNetSpec(depth=1)
        with pytest.raises(ValueError):
            UNetSpec(dropout_rate=1.0)


class TestBuild:
    def test_same_seed_identical(self):
        _, a = build_unet(UNetSpec(), seed=7)
        _, b = build_unet(UNetSpec(), seed=7)
        assert list(a) == list(b)
        for k in a:
            np.testing.assert_array_equal(a[k].data, b[k].data)

    def test_different_seed_differs(self):
        _, a = build_unet(UNetSpec(), seed=7)
        _, b = build_unet(UNetSpec(), seed=8)
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a)

    def test_names_unique_and_ordered(self):
        _, params = build_unet(UNetSpec(), seed=0)
        names = list(params)
        assert len(names) == len(set(names))
        assert names[0] == "enc0.weight" and names[-1] == "out.bias"

    def test_init_is_fan_in_scaled(self):
        _, params = build_unet(UNetSpec(base_width=32), seed=0)
        w = params["enc2.weight"].data
        assert abs(w.mean()) < 0.01
        assert w.std() == pytest.approx(np.sqrt(2.0 / (64 * 16)), rel=0.05)


class TestGeneratorForward:
    def test_shape_and_range(self, rng):
        gen, _ = build_unet(UNetSpec(depth=3), seed=0)
        out = generator_forward(gen, image(rng), "infer")
        assert out.shape == (1, 3, 64, 64)
        assert np.all(np.abs(out.data) < 1)

    @pytest.mark.parametrize("size,depth", [(8, 2), (16, 3), (32, 4), (24, 3)])
    def test_shape_preserved(self, rng, size, depth):
        gen, _ = build_unet(UNetSpec(depth=depth, base_width=4), seed=0)
        x = image(rng, n=2, size=size)
        assert generator_forward(gen, x, "train", seed=1).shape == x.shape

    def test_indivisible_extent_rejected(self, rng):
        gen, _ = build_unet(UNetSpec(depth=3), seed=0)
        with pytest.raises(ValueError, match="divisible"):
            generator_forward(gen, image(rng, size=20), "infer")

    def test_wrong_channels_rejected(self):
        gen, _ = build_unet(UNetSpec(depth=2), seed=0)
        with pytest.raises(ValueError):
            generator_forward(gen, Tensor(np.zeros((1, 1, 8, 8), dtype=np.float32)), "infer")

    def test_train_mode_is_stochastic_infer_is_not(self, rng):
        gen, _ = build_unet(UNetSpec(), seed=0)
        x = image(rng)
        a = generator_forward(gen, x, "train", seed=1).data
        b = generator_forward(gen, x, "train", seed=2).data
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(generator_forward(gen, x, "infer").data, generator_forward(gen, x, "infer").data)

    def test_every_skip_is_load_bearing(self, rng):
        spec = UNetSpec(depth=4, base_width=4)
        gen, _ = build_unet(spec, seed=3)
        x = image(rng, size=32)
        ref = generator_forward(gen, x, "infer").data
        for level in range(spec.depth - 1):
            ablated = generator_forward(gen, x, "infer", skip_ablation=level).data
            assert np.abs(ablated - ref).max() > 0, level

    def test_end_to_end_gradient_every_parameter(self, rng):
        gen, params = build_unet(UNetSpec(base_width=4, depth=2, dropout_rate=0.0), seed=5, dtype=FLOAT64)
        x = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)), dtype=FLOAT64)

        def loss():
            return ops.mean(generator_forward(gen, x, "infer"))

        backward(loss())
        for name, p in params.items():
            idx = tuple(int(rng.integers(n)) for n in p.shape)
            fd = central_difference(lambda: loss().item(), p.data, idx)
            a = p.grad[idx]
            assert abs(a - fd) / max(abs(a), abs(fd), 1e-6) <= 1e-5, name


class TestDiscriminator:
    def test_zero_weights_give_half(self, rng):
        disc, params = build_discriminator(DiscriminatorSpec(), seed=0)
        for p in params.values():
            p.data[...] = 0
        out = discriminator_forward(disc, image(rng, 2, 32), image(rng, 2, 32))
        np.testing.assert_array_equal(out.data, np.float32(0.5))

    def test_output_in_unit_interval(self, rng):
        disc, _ = build_discriminator(DiscriminatorSpec(), seed=0)
        out = discriminator_forward(disc, image(rng, 4, 32), image(rng, 4, 32)).data
        assert out.shape == (4,)
        assert np.all((out > 0) & (out < 1))

    def test_condition_is_live(self, rng):
        disc, _ = build_discriminator(DiscriminatorSpec(), seed=0)
        y, x = image(rng, 1, 32), image(rng, 1, 32)
        x2 = Tensor(x.data + rng.normal(0, 0.3, x.shape).astype(np.float32))
        a = discriminator_forward(disc, y, x).data
        b = discriminator_forward(disc, y, x2).data
        assert np.abs(a - b).max() > 0

    def test_shape_mismatch(self, rng):
        disc, _ = build_discriminator(DiscriminatorSpec(), seed=0)
        with pytest.raises(ValueError):
            discriminator_forward(disc, image(rng, 1, 32), image(rng, 1, 16))

    def test_param_count(self):
        spec = DiscriminatorSpec(widths=(8, 16))
        _, params = build_discriminator(spec, seed=0)
        assert sum(p.size for p in params.values()) == discriminator_param_count(spec)
