import inspect

import pytest
import torch
from torch import nn

from cevae.decoders import CapsuleDecoder, DecoderConfig, SpatialDecoder
from cevae.errors import ConfigurationError, InputShapeError
from cevae.model import CEVAE, ModelConfig, ablation_variant, reference_config, small_config

from conftest import grad_rel_error


@pytest.fixture(scope="module")
def small_model():
    torch.manual_seed(0)
    return CEVAE(small_config(32)).eval()


def _zero_weights(module):
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.zero_()


class TestDecoders:
    def test_reference_shapes(self):
        x = torch.randn(1, 256, 16, 16)
        with torch.no_grad():
            assert CapsuleDecoder(DecoderConfig()).eval()(x).shape == (1, 3, 256, 256)
            assert SpatialDecoder(DecoderConfig()).eval()(x).shape == (1, 3, 256, 256)

    def test_four_stages_each(self):
        assert DecoderConfig().num_blocks == 4
        assert len(CapsuleDecoder(DecoderConfig()).blocks) == 4
        assert len(SpatialDecoder(DecoderConfig()).blocks) == 4

    def test_spatial_4x4_to_64(self):
        dec = SpatialDecoder(DecoderConfig())
        with torch.no_grad():
            assert dec(torch.randn(1, 256, 4, 4)).shape == (1, 3, 64, 64)

    def test_spatial_zero_weights_constant(self):
        dec = SpatialDecoder(DecoderConfig(channel_schedule=(8, 8, 4)))
        _zero_weights(dec)
        out = dec(torch.randn(1, 8, 4, 4))
        for c in range(3):
            assert torch.equal(out[0, c], torch.full_like(out[0, c], dec.conv_out.bias[c].item()))

    def test_wrong_input(self):
        with pytest.raises(InputShapeError):
            CapsuleDecoder(DecoderConfig())(torch.randn(1, 128, 16, 16))
        with pytest.raises(InputShapeError):
            SpatialDecoder(DecoderConfig())(torch.randn(256, 16, 16))

    def test_deterministic(self):
        dec = CapsuleDecoder(DecoderConfig(channel_schedule=(8, 8))).eval()
        x = torch.randn(1, 8, 4, 4)
        assert torch.equal(dec(x), dec(x))

    @pytest.mark.parametrize("kind", [CapsuleDecoder, SpatialDecoder])
    def test_gradient_one_block(self, kind, f64):
        torch.manual_seed(9)
        dec = kind(DecoderConfig(channel_schedule=(8, 8)))
        x = torch.randn(1, 8, 4, 4)
        assert grad_rel_error(lambda t: dec(t).pow(2).sum(), x, max_coords=64) < 1e-3

    def test_empty_schedule(self):
        with pytest.raises(ConfigurationError):
            DecoderConfig(channel_schedule=(8,))


class TestModel:
    def test_reference_round_trip(self):
        model = CEVAE(reference_config()).eval()
        with torch.no_grad():
            z = model.encode(torch.rand(1, 3, 256, 256) * 2 - 1)
            assert z.shape == (1, 256, 16, 16)
            out = model.enhance(z)
        assert out.shape == (1, 3, 256, 256)
        assert out.min() >= -1 and out.max() <= 1

    def test_additivity(self, f64):
        torch.manual_seed(1)
        model = CEVAE(small_config(32)).eval()
        z = torch.randn(2, 32, 4, 4)
        with torch.no_grad():
            diff = model.enhance(z, clamp=False) - model.decode_spatial(z) - model.decode_capsule(
                model.capsule_vectors(z)
            )
        assert diff.abs().max() < 1e-12

    def test_enhance_clamps_decode_does_not(self, small_model):
        z = torch.randn(1, 32, 4, 4) * 50
        with torch.no_grad():
            raw = small_model.decode(z)
            out = small_model.enhance(z)
        assert torch.equal(out, raw.clamp(-1, 1))

    def test_decode_takes_only_latent(self):
        for name in ("decode", "enhance", "decode_capsule", "decode_spatial"):
            params = [p for p in inspect.signature(getattr(CEVAE, name)).parameters if p != "self"]
            assert "img" not in params and "image" not in params
            assert params[0] in ("latent", "vectors")

    def test_ablations_are_single_branch(self, small_model):
        z = torch.randn(1, 32, 4, 4)
        no_s = ablation_variant("no_spatial", base=small_model)
        no_c = ablation_variant("no_capsule", base=small_model)
        assert no_s.spatial_decoder is None
        assert no_c.capsule_decoder is None and no_c.capsules is None
        with torch.no_grad():
            assert torch.equal(no_s.decode(z), small_model.decode_capsule(small_model.capsule_vectors(z)))
            assert torch.equal(no_c.decode(z), small_model.decode_spatial(z))
            full = ablation_variant("full", base=small_model)
            assert torch.equal(full.decode(z), small_model.decode(z))

    def test_zeroed_spatial_equals_capsule_plus_bias(self, small_model):
        import copy

        m = copy.deepcopy(small_model)
        with torch.no_grad():
            for p in m.spatial_decoder.parameters():
                p.zero_()
            b = torch.randn(3)
            m.spatial_decoder.conv_out.bias.copy_(b)
            z = torch.randn(1, 32, 4, 4)
            expected = m.decode_capsule(m.capsule_vectors(z)) + b.view(1, 3, 1, 1)
            torch.testing.assert_close(m.decode(z), expected)

    def test_fresh_variant(self):
        assert CEVAE(small_config(32), variant="no_capsule").capsules is None

    def test_unknown_variant(self, small_model):
        with pytest.raises(ConfigurationError):
            CEVAE(small_config(32), variant="half")
        with pytest.raises(ConfigurationError):
            ablation_variant("nope", base=small_model)

    def test_variant_cannot_resurrect_branch(self, small_model):
        with pytest.raises(ConfigurationError):
            small_model.variant_of("no_capsule").variant_of("no_spatial")

    def test_last_layer(self, small_model):
        assert small_model.last_layer is small_model.capsule_decoder.conv_out.weight
        no_c = small_model.variant_of("no_capsule")
        assert no_c.last_layer is no_c.spatial_decoder.conv_out.weight

    def test_config_round_trip(self):
        cfg = small_config(64)
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert again.config_hash() == cfg.config_hash()
        assert cfg.config_hash() != small_config(32).config_hash()

    def test_inconsistent_config(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(image_size=100)

    def test_small_forward_shape(self, small_model):
        with torch.no_grad():
            assert small_model(torch.randn(2, 3, 32, 32)).shape == (2, 3, 32, 32)
