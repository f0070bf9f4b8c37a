import numpy as np
import pytest

from wildsam import numerics as nx
from wildsam.backbone import Backbone, EncoderBlock, PatchEmbed, ViTConfig, adapter_layer_preset
from wildsam.nn import component_rng, spatial_to_tokens, tokens_to_spatial
from wildsam.numerics import DimensionError, Tensor
from wildsam.pa_moe import PAMoEAdapter


@pytest.fixture
def cfg():
    return ViTConfig()


def test_token_count_at_defaults(cfg):
    assert cfg.num_tokens == 64 and cfg.grid == (8, 8)


def test_config_validation():
    with pytest.raises(ValueError):
        ViTConfig(image_size=60).validate()
    with pytest.raises(ValueError):
        ViTConfig(embed_dim=30, heads=4).validate()


def test_adapter_presets():
    assert adapter_layer_preset("S", 4) == [3]
    assert adapter_layer_preset("B", 4) == [2, 3]
    assert adapter_layer_preset("L", 4) == [0, 1, 2, 3]
    assert adapter_layer_preset("S", 12) == [9, 10, 11]
    assert adapter_layer_preset("B", 12) == list(range(6, 12))
    assert adapter_layer_preset("none", 4) == []
    with pytest.raises(ValueError):
        adapter_layer_preset("XL", 4)


def test_zero_image_gives_positional_embedding(cfg):
    pe = PatchEmbed(cfg, component_rng(0, 0))
    out = pe(np.zeros((1, 3, 64, 64))).data
    np.testing.assert_array_equal(out[0], pe.pos.data)


def test_patch_embed_locality(cfg, rng):
    pe = PatchEmbed(cfg, component_rng(0, 0))
    a = rng.normal(size=(1, 3, 64, 64))
    b = a.copy()
    b[0, :, 16:24, 40:48] += 1.0  # patch row 2, column 5
    diff = np.any(pe(a).data != pe(b).data, axis=-1)[0]
    assert np.flatnonzero(diff).tolist() == [2 * 8 + 5]


def test_patch_embed_size_mismatch(cfg):
    pe = PatchEmbed(cfg, component_rng(0, 0))
    with pytest.raises(DimensionError):
        pe(np.zeros((1, 3, 32, 32)))


def test_token_spatial_round_trip(rng):
    t = rng.normal(size=(2, 64, 16))
    s = tokens_to_spatial(t, (8, 8))
    assert s.shape == (2, 16, 8, 8)
    np.testing.assert_array_equal(spatial_to_tokens(s).data, t)
    np.testing.assert_array_equal(s.data[1, :, 2, 3], t[1, 2 * 8 + 3])


def test_block_perturbation_at_zero_alpha_is_bit_identical(cfg, rng):
    blk = EncoderBlock(cfg, component_rng(0, 0))
    x = Tensor(rng.normal(size=(2, 64, 64)))
    dq, dv = rng.normal(size=(2, 2, 64, 64))
    plain = blk(x).data
    np.testing.assert_array_equal(blk(x, (dq, dv), Tensor(np.zeros(()))).data, plain)
    np.testing.assert_array_equal(blk(x, (np.zeros_like(dq), np.zeros_like(dv)), Tensor(np.array(0.7))).data, plain)


def test_alpha_enters_linearly_at_projection(cfg, rng):
    blk = EncoderBlock(cfg, component_rng(0, 0))
    x = Tensor(rng.normal(size=(1, 64, 64)))
    dq, dv = rng.normal(size=(2, 1, 64, 64))
    q0, k0, v0 = blk.project_qkv(x)
    q1, _, v1 = blk.project_qkv(x, (dq, dv), 0.3)
    q2, _, v2 = blk.project_qkv(x, (dq, dv), 0.6)
    np.testing.assert_allclose(q2.data - q1.data, 0.3 * dq, atol=1e-12)
    np.testing.assert_allclose(v2.data - v0.data, 0.6 * dv, atol=1e-12)


def test_block_rejects_wrong_perturbation_shape(cfg, rng):
    blk = EncoderBlock(cfg, component_rng(0, 0))
    with pytest.raises(DimensionError):
        blk(Tensor(rng.normal(size=(1, 64, 64))), (np.zeros((1, 16, 64)), np.zeros((1, 16, 64))), 1.0)


def test_encode_ignores_adapters_when_no_layers(cfg, rng):
    img = rng.normal(size=(2, 3, 64, 64))
    bb = Backbone(cfg, adapter_layers=[], seed=0)
    adapters = {str(i): PAMoEAdapter(64, 64, seed=1, block=i) for i in range(4)}
    a, tap_a = bb.encode(img, adapters)
    for ad in adapters.values():
        for p in ad.parameters():
            p.data = p.data + 1.0
    b, tap_b = bb.encode(img, adapters)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(tap_a.data, tap_b.data)
    np.testing.assert_array_equal(spatial_to_tokens(tap_a).data, a.data)  # default tap is the last block


def test_encode_deterministic_and_tap_layer(cfg, rng):
    img = rng.normal(size=(1, 3, 64, 64))
    a = Backbone(cfg, seed=3, tap_layer=1)
    b = Backbone(cfg, seed=3, tap_layer=1)
    ta, tapa = a.encode(img)
    tb, tapb = b.encode(img)
    np.testing.assert_array_equal(ta.data, tb.data)
    np.testing.assert_array_equal(tapa.data, tapb.data)
    assert not np.array_equal(spatial_to_tokens(tapa).data, ta.data)


def test_only_alphas_are_trainable(cfg):
    bb = Backbone(cfg, adapter_layers=[1, 3])
    names = [n for n, p in bb.named_parameters() if p.trainable]
    assert names == ["alphas.1", "alphas.3"]
    assert all(p.data == 0 for _, p in bb.trainable_parameters())


def test_gradients_reach_adapter_when_alpha_nonzero(cfg, rng):
    bb = Backbone(cfg, adapter_layers=[2])
    ad = {"2": PAMoEAdapter(64, 64, seed=0, block=2)}
    bb.alphas["2"].data = np.array(0.5)
    with nx.Tape() as tape:
        tokens, _ = bb.encode(rng.normal(size=(1, 3, 64, 64)), ad)
        loss = nx.tsum(tokens * tokens)
    tape.backward(loss)
    assert all(p.grad is not None and np.any(p.grad != 0) for _, p in ad["2"].trainable_parameters())
    assert all(p.grad is None for n, p in bb.named_parameters() if not p.trainable)
