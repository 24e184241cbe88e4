"""Encoder shapes, block algebra and parameter accounting."""

import numpy as np
import pytest

from dformer.core import Initializer, Rng, Tensor, backward, ops, precision
from dformer.encoder import (GAA, LEA, BaseModule, DFormerEncoder, DualFeatures, RGBDBlock, VARIANTS,
                             count_parameters, drop_path_rates, get_variant)
from dformer.encoder.config import VariantConfig

from oracles import TABLE_CHANNELS, lin, oracle_block, oracle_decoder, oracle_encoder


def _feats(g, B, c_rgb, c_d, h, w=None):
    w = w or h
    return DualFeatures(Tensor(g.standard_normal((B, c_rgb, h, w)).astype(np.float32)),
                        Tensor(g.standard_normal((B, c_d, h, w)).astype(np.float32)))


# ------------------------------------------------------------------ layer-enumeration oracle

TOY = VariantConfig("toy", (8, 16, 24, 32), (4, 8, 12, 16), (1, 1, 1, 1), (8, 4), expansions=(4, 4, 4, 4),
                    decoder_dim=16, gaa_pool_k=3, lea_kernel=3, base_kernel=5, ham_rank=4, num_classes=3)


@pytest.mark.parametrize("changes", [
    {}, {"q_fusion": "qkv"}, {"q_fusion": "none"}, {"lea_fusion": "concat"}, {"lea_fusion": "add"},
    {"depth_in_channels": 3}, {"use_ham": False}, {"depths": (2, 1, 3, 1)},
])
def test_count_matches_layer_enumeration(changes):
    cfg = TOY.replace(**changes)
    assert count_parameters(cfg) == oracle_encoder(cfg)
    assert count_parameters(cfg, include_decoder=True) == oracle_encoder(cfg) + oracle_decoder(cfg)


@pytest.mark.parametrize("name", ["T", "S", "B", "L", "tiny-test"])
def test_named_variants_match_oracle(name):
    cfg = VARIANTS[name]
    assert count_parameters(cfg, include_decoder=True) == oracle_encoder(cfg) + oracle_decoder(cfg)


def test_count_invariant_to_pool_size():
    assert count_parameters(TOY.replace(gaa_pool_k=1)) == count_parameters(TOY.replace(gaa_pool_k=9))


def test_qkv_adds_exactly_the_depth_key_value_inputs():
    extra = count_parameters(TOY.replace(q_fusion="qkv")) - count_parameters(TOY)
    # K and V take C_d more input channels in every GAA block (stages 2-4)
    assert extra == sum(2 * TOY.depth_channels[i] ** 2 * TOY.depths[i] for i in range(1, 4))


def test_doubling_channels_quadruples_linear_params():
    cr, cd, e = 16, 8, 4
    lin_only = lambda cr, cd: (lin(cr, cr * e, False) + lin(cr * e, cr, False)
                               + lin(cd, cd * e, False) + lin(cd * e, cd, False))
    assert lin_only(2 * cr, 2 * cd) == 4 * lin_only(cr, cd)
    small = oracle_block(cr, cd, e, 3, 3, True)
    big = oracle_block(2 * cr, 2 * cd, e, 3, 3, True)
    assert 3.5 < big / small < 4.0


def test_block_params_pure_function_of_shape():
    a = RGBDBlock(Initializer(0), "a", 16, 8, 4, 1, True, 3, 3, 3).num_parameters()
    b = RGBDBlock(Initializer(9), "b", 16, 8, 4, 1, True, 3, 3, 3).num_parameters()
    assert a == b == oracle_block(16, 8, 4, 3, 3, True)


def test_stage1_has_no_gaa():
    enc = DFormerEncoder(VARIANTS["tiny-test"])
    names = [n for n, _ in enc.named_parameters()]
    assert not any(n.startswith("stage1.") and ".gaa." in n for n in names)
    assert any(n.startswith("stage2.block1.gaa.") for n in names)


def test_channel_ratio_monotone():
    base = VARIANTS["T"]
    counts = [count_parameters(base.with_channel_ratio(r), True) for r in (1 / 8, 1 / 4, 1 / 2, 1)]
    assert counts == sorted(counts) and len(set(counts)) == 4


@pytest.mark.parametrize("name,ref", [("T", 6.0), ("S", 18.7), ("B", 29.5), ("L", 39.0)])
def test_parameter_budgets_within_tolerance(name, ref):
    n = count_parameters(VARIANTS[name], include_decoder=True)
    assert abs(n / (ref * 1e6) - 1) < 0.15


# ------------------------------------------------------------------ shapes


def test_table_channels():
    for name, chans in TABLE_CHANNELS.items():
        cfg = VARIANTS[name]
        assert list(zip(cfg.rgb_channels, cfg.depth_channels)) == chans
        assert all(d * 2 == r for r, d in chans)


def test_stem_shape_variant_t():
    enc = DFormerEncoder(VARIANTS["T"])
    f = enc.stem(Tensor(np.zeros((1, 3, 64, 64))), Tensor(np.zeros((1, 1, 64, 64))))
    assert f.rgb.shape == (1, 16, 16, 16) and f.depth.shape == (1, 8, 16, 16)


def test_stem_zero_input_zero_preactivation():
    enc = DFormerEncoder(VARIANTS["tiny-test"])
    conv = enc.stem_rgb.conv1.conv
    assert not np.any(conv(Tensor(np.zeros((1, 3, 32, 32)))).data)


def test_encoder_pyramid_variant_t():
    enc = DFormerEncoder(VARIANTS["T"]).eval()
    g = np.random.default_rng(0)
    outs = enc(Tensor(g.standard_normal((1, 3, 64, 64))), Tensor(g.standard_normal((1, 1, 64, 64))))
    got = [(o.rgb.shape[1], o.depth.shape[1], o.rgb.shape[2], o.rgb.shape[3]) for o in outs]
    assert got == [(32, 16, 16, 16), (64, 32, 8, 8), (128, 64, 4, 4), (256, 128, 2, 2)]
    assert all(o.depth.shape[2:] == o.rgb.shape[2:] for o in outs)


def test_indivisible_input_rejected():
    enc = DFormerEncoder(VARIANTS["tiny-test"])
    with pytest.raises(ValueError, match="divisible by 32"):
        enc(Tensor(np.zeros((1, 3, 48, 64))), Tensor(np.zeros((1, 1, 48, 64))))


def test_downsample_shapes_and_branch_independence():
    enc = DFormerEncoder(VARIANTS["T"])
    down = enc.stages[1].down
    f = _feats(np.random.default_rng(1), 1, 32, 16, 16)
    out = down(f)
    assert out.rgb.shape == (1, 64, 8, 8) and out.depth.shape == (1, 32, 8, 8)
    backward(ops.sum(out.depth), params=down.parameters())
    assert not np.any(down.rgb.conv.weight.grad)
    assert np.any(down.depth.conv.weight.grad)
    with pytest.raises(ValueError, match="even"):
        down(_feats(np.random.default_rng(1), 1, 32, 16, 7))


def test_eval_is_deterministic():
    enc = DFormerEncoder(VARIANTS["tiny-test"]).eval()
    g = np.random.default_rng(2)
    rgb, depth = Tensor(g.standard_normal((2, 3, 32, 32))), Tensor(g.standard_normal((2, 1, 32, 32)))
    a = enc(rgb, depth)[-1].rgb.data
    b = enc(rgb, depth, rng=Rng(99))[-1].rgb.data
    np.testing.assert_array_equal(a, b)


def test_drop_path_ramp():
    rates = drop_path_rates(VARIANTS["T"])
    flat = [r for s in rates for r in s]
    assert len(flat) == sum(VARIANTS["T"].depths)
    assert flat[0] == 0.0 and flat[-1] == pytest.approx(0.1)
    assert np.all(np.diff(flat) > 0)


def test_full_drop_makes_last_block_identity():
    cfg = VARIANTS["tiny-test"].replace(drop_path_max=1.0)
    enc = DFormerEncoder(cfg, Initializer(0, std=0.2)).train()
    last = enc.stages[3].blocks[0]
    assert last.drop_path_rate == 1.0
    f = _feats(np.random.default_rng(3), 3, 64, 32, 2)
    out = last(f, Rng(0))
    np.testing.assert_array_equal(out.rgb.data, f.rgb.data)
    np.testing.assert_array_equal(out.depth.data, f.depth.data)


# ------------------------------------------------------------------ block components


def test_gaa_shape_and_row_sums():
    g = np.random.default_rng(4)
    gaa = GAA(Initializer(0, std=0.2), "gaa", 16, 16, 2, 7)
    f = _feats(g, 2, 16, 16, 8)
    assert gaa(f.rgb, f.depth).shape == (2, 16, 8, 8)
    attn, o = gaa.attention(f.rgb, f.depth)
    assert attn.shape == (2, 2, 49, 64) and o.shape == (2, 16, 7, 7)
    np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-5)


def test_gaa_q_fusion_switch():
    g = np.random.default_rng(5)
    f = _feats(g, 1, 8, 8, 6)
    q_only = GAA(Initializer(1, std=0.5), "gaa", 8, 8, 1, 3, "q")
    none = GAA(Initializer(1, std=0.5), "gaa", 8, 8, 1, 3, "none")
    # share every weight; q_only additionally reads depth through its last C_d input columns
    none.q.weight.data[...] = q_only.q.weight.data[:, :8]
    for a in ("k", "v", "proj"):
        getattr(none, a).weight.data[...] = getattr(q_only, a).weight.data
    assert not np.allclose(q_only(f.rgb, f.depth).data, none(f.rgb, f.depth).data)
    q_only.q.weight.data[:, 8:] = 0.0
    np.testing.assert_allclose(q_only(f.rgb, f.depth).data, none(f.rgb, f.depth).data, atol=1e-6)


def test_lea_algebra():
    g = np.random.default_rng(6)
    f = _feats(g, 2, 8, 4, 6)
    lea = LEA(Initializer(0, std=0.3), "lea", 8, 4, 5, "hadamard")
    zero = Tensor(np.zeros_like(f.depth.data))
    np.testing.assert_array_equal(lea(f.rgb, zero).data, 0.0)
    delta = np.zeros_like(lea.dwconv.weight.data)
    delta[:, :, 2, 2] = 1.0
    lea.dwconv.weight.data[...] = delta
    gate = lea.dwconv(lea.depth_lin(f.depth)).data
    np.testing.assert_allclose(gate, lea.depth_lin(f.depth).data, atol=1e-6)
    add = LEA(Initializer(0, std=0.3), "lea", 8, 4, 5, "add")
    had = LEA(Initializer(0, std=0.3), "lea", 8, 4, 5, "hadamard")
    a, h = add(f.rgb, f.depth), had(f.rgb, f.depth)
    assert a.shape == h.shape == (2, 4, 6, 6)
    assert not np.allclose(a.data, h.data)
    assert LEA(Initializer(0), "c", 8, 4, 5, "concat")(f.rgb, f.depth).shape == (2, 4, 6, 6)
    with pytest.raises(ValueError):
        LEA(Initializer(0), "x", 8, 4, 5, "mul")


def test_base_module():
    from dformer.core import grad_check
    base = BaseModule(Initializer(0, std=0.3), "base", 6, 3)
    assert not np.any(base(Tensor(np.zeros((1, 6, 4, 4)))).data)
    with precision("f64"):
        base.to(np.float64)
        x = Tensor(np.random.default_rng(7).standard_normal((1, 6, 4, 4)))
        r = Tensor(np.random.default_rng(8).standard_normal((1, 6, 4, 4)))
        assert base(x).shape == (1, 6, 4, 4)
        err = grad_check(lambda: ops.sum(ops.mul(base(x), r)),
                         [base.lin.weight, base.gate_lin.weight, base.dwconv.weight])
    assert err < 1e-6


def test_block_identity_when_outputs_zeroed():
    block = RGBDBlock(Initializer(0, std=0.3), "b", 16, 8, 4, 1, True, 3, 3, 3).train()
    for layer in block.output_layers():
        layer.weight.data[...] = 0
        layer.bias.data[...] = 0
    f = _feats(np.random.default_rng(9), 2, 16, 8, 4)
    out = block(f)
    np.testing.assert_array_equal(out.rgb.data, f.rgb.data)
    np.testing.assert_array_equal(out.depth.data, f.depth.data)


def test_block_cross_modal_gradient():
    block = RGBDBlock(Initializer(0, std=0.3), "b", 16, 8, 4, 1, True, 3, 3, 3).train()
    f = _feats(np.random.default_rng(10), 2, 16, 8, 4)
    backward(ops.sum(ops.mul(block(f).rgb, block(f).rgb)), params=block.parameters())
    assert np.abs(block.lea.depth_lin.weight.grad).max() > 0
    assert np.abs(block.gaa.q.weight.grad[:, 16:]).max() > 0


def test_encoder_identity_reduction():
    cfg = VARIANTS["tiny-test"]
    enc = DFormerEncoder(cfg, Initializer(0, std=0.2)).eval()
    for block in enc.blocks():
        for layer in block.output_layers():
            layer.weight.data[...] = 0
            layer.bias.data[...] = 0
    g = np.random.default_rng(11)
    rgb, depth = Tensor(g.standard_normal((2, 3, 64, 64))), Tensor(g.standard_normal((2, 1, 64, 64)))
    full = enc(rgb, depth)
    bare = enc(rgb, depth, skip_blocks=True)
    for a, b in zip(full, bare):
        assert np.abs(a.rgb.data - b.rgb.data).max() < 1e-6
        assert np.abs(a.depth.data - b.depth.data).max() < 1e-6


# ------------------------------------------------------------------ config


def test_config_validation():
    base = VARIANTS["tiny-test"]
    for bad in ({"q_fusion": "kv"}, {"lea_fusion": "mul"}, {"depths": (0, 1, 1, 1)},
                {"expansions": (2, 4, 4, 4)}, {"gaa_pool_k": 0}, {"lea_kernel": 4},
                {"heads": (3, 1, 1, 1)}):
        with pytest.raises(ValueError):
            base.replace(**bad)
    with pytest.raises(ValueError, match="unknown variant"):
        get_variant("XL")


def test_config_roundtrip_and_heads():
    cfg = VARIANTS["B"]
    assert type(cfg).from_dict(cfg.to_dict()) == cfg
    assert cfg.heads == tuple(max(1, d // 16) for d in cfg.depth_channels)
