import json

import numpy as np
import pytest

from uniphynet import model as M
from uniphynet import nn
from uniphynet.dataset import ConfigError, Modality
from uniphynet.nn import functional as F


def _x(shape, seed=0):
    return nn.Tensor(np.random.default_rng(seed).standard_normal(shape).astype(nn.get_dtype()))


def _init(module, seed=0):
    module.reset_parameters(nn.RngStream(seed))
    return module


def test_default_modality_table():
    eeg, ecg, eda = (M.ModalityConfig.default(m) for m in ("EEG", "ECG", "EDA"))
    assert (eeg.kernels, eeg.resnet_blocks, eeg.in_channels, eeg.sample_rate_hz) == ((3, 9), 8, 4, 256)
    assert (ecg.kernels, ecg.resnet_blocks, ecg.in_channels, ecg.sample_rate_hz) == ((5, 11), 9, 3, 512)
    assert (eda.kernels, eda.resnet_blocks, eda.in_channels, eda.sample_rate_hz) == ((13,), 7, 3, 128)
    assert eeg.feature_maps == 64 and M.ModalityConfig.default("EEG", multimodal=True).feature_maps == 32
    assert eeg.out_length == ecg.out_length == eda.out_length == 10
    assert (eeg.gru_hidden, eeg.cbam_reduction, eeg.gru_on_raw) == (64, 8, False)


@pytest.mark.parametrize("kw", [dict(feature_maps=63), dict(resnet_blocks=10), dict(cbam_reduction=5),
                                dict(kernels=())])
def test_modality_config_invariants(kw):
    with pytest.raises(ConfigError):
        M.ModalityConfig.default("EEG", **kw)


def test_net_config_invariants():
    eeg = M.ModalityConfig.default("EEG")
    with pytest.raises(ConfigError):
        M.NetConfig((eeg,), fusion="self_attention")
    with pytest.raises(ConfigError):
        M.NetConfig.default(("EEG", "ECG"), fusion="none")
    with pytest.raises(ConfigError):
        M.NetConfig((eeg,), num_classes=4)
    with pytest.raises(ConfigError):
        M.NetConfig((eeg, M.ModalityConfig.default("ECG", resnet_blocks=8)))
    with pytest.raises(ConfigError):
        M.NetConfig((M.ModalityConfig.default("EEG", True, gru_on_raw=True), M.ModalityConfig.default("EDA", True)))
    assert M.NetConfig((eeg,)).fusion is M.Fusion.NONE
    assert M.NetConfig.default(("EEG", "ECG", "EDA")).fusion is M.Fusion.SELF_ATTENTION


def test_config_dict_round_trip():
    cfg = M.NetConfig.default(("EEG", "EDA"), 3, block_kind="DSC+CBAM", use_gru=False)
    again = M.NetConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_parallel_conv_eeg_shape():
    block = _init(M.ParallelConvBlock(4, 64, (3, 9)))
    assert len(block.branches) == 2
    assert all(b.conv.weight.shape[0] == 32 for b in block.branches)
    assert block(_x((2, 4, 2560))).shape == (2, 64, 2560)


def test_parallel_conv_eda_single_branch():
    block = _init(M.ParallelConvBlock(3, 64, (13,)))
    assert len(block.branches) == 1
    assert block(_x((2, 3, 1280))).shape == (2, 64, 1280)


def test_parallel_conv_zero_weights_give_zeros():
    block = _init(M.ParallelConvBlock(4, 8, (3, 9)))
    for p in block.parameters():
        if p.init[0] != "ones":
            p.data[...] = 0.0
    assert np.all(block(_x((2, 4, 64))).data == 0)


def test_parallel_conv_indivisible():
    with pytest.raises(ConfigError):
        M.ParallelConvBlock(4, 7, (3, 9))


def test_even_kernel_keeps_length():
    block = _init(M.ParallelConvBlock(2, 4, (4, 64)))
    assert block(_x((1, 2, 100))).shape == (1, 4, 100)


@pytest.mark.parametrize("kind", list(M.BlockKind))
def test_residual_block_halves_length(kind):
    block = _init(M.ResidualBlock(16, kind, 4))
    assert block(_x((2, 16, 64))).shape == (2, 16, 32)
    assert (block.cbam is not None) == kind.attention


def test_residual_block_odd_length():
    with pytest.raises(nn.ShapeError):
        _init(M.ResidualBlock(8, reduction=4))(_x((1, 8, 33)))


@pytest.mark.parametrize("kind", list(M.BlockKind))
def test_zero_residual_branch_is_cbam_of_shortcut(kind):
    block = _init(M.ResidualBlock(8, kind, 4))
    conv2 = block.conv2.pointwise if kind.separable else block.conv2
    conv2.weight.data[...] = 0.0
    conv2.bias.data[...] = 0.0
    x = _x((2, 8, 32))
    expected = block.shortcut(x)
    if block.cbam is not None:
        expected = block.cbam(expected)
    assert np.array_equal(block(x).data, expected.data)


def test_residual_block_is_pre_activation():
    block = _init(M.ResidualBlock(4, M.BlockKind.RESNET_PLAIN))
    x = _x((3, 4, 16))
    h = block.conv1(F.relu(block.bn1(x)))
    ref = block.shortcut(x) + block.conv2(F.relu(block.bn2(h)))
    assert np.allclose(block(x).data, ref.data)


def test_dsc_block_uses_depthwise_convs():
    block = _init(M.ResidualBlock(8, M.BlockKind.DSC))
    assert block.conv1.depthwise.weight.shape == (8, 1, 3)
    assert block.conv1.pointwise.weight.shape == (8, 8, 1)


def test_channel_attention_identical_channels_symmetric_mlp():
    # equal weights need a channel-symmetric MLP: equal output rows and biases
    ca = _init(M.ChannelAttention(8, 4))
    ca.fc2.weight.data[...] = ca.fc2.weight.data[:1]
    ca.fc2.bias.data[...] = 0.3
    row = np.random.default_rng(0).standard_normal(20)
    ca(nn.Tensor(np.tile(row, (2, 8, 1)).astype(nn.get_dtype())))
    assert np.allclose(ca.last_weights, ca.last_weights[:, :1], atol=1e-12)


def test_channel_attention_identical_channels_share_descriptors():
    row = np.random.default_rng(0).standard_normal(20)
    y = nn.Tensor(np.tile(row, (2, 8, 1)))
    for pooled in (F.global_avg_time(y).data, F.global_max_time(y).data):
        assert np.all(pooled == pooled[:, :1])


def test_channel_attention_range_and_zero_mlp():
    ca = _init(M.ChannelAttention(8, 4))
    y = _x((3, 8, 12))
    out = ca(y)
    assert np.all((ca.last_weights > 0) & (ca.last_weights < 1))
    for p in ca.parameters():
        p.data[...] = 0.0
    out = ca(y)
    assert np.all(ca.last_weights == 0.5)
    assert np.allclose(out.data, y.data / 2)


def test_temporal_attention_zero_conv_and_range():
    ta = _init(M.TemporalAttention())
    y = _x((2, 6, 20))
    ta(y)
    assert np.all((ta.last_weights > 0) & (ta.last_weights < 1))
    assert ta.last_weights.shape == (2, 1, 20)
    ta.conv.weight.data[...] = 0.0
    out = ta(y)
    assert np.all(ta.last_weights == 0.5)
    assert np.allclose(out.data, y.data / 2)


def test_temporal_attention_short_input():
    with pytest.raises(ConfigError):
        _init(M.TemporalAttention())(_x((1, 4, 6)))


def test_temporal_attention_shift_equivariant():
    ta = _init(M.TemporalAttention(), seed=3)
    row = np.random.default_rng(1).standard_normal(40)
    y = np.tile(row, (1, 5, 1))
    ta(nn.Tensor(y))
    s0 = ta.last_weights[0, 0]
    shift = 6
    ta(nn.Tensor(np.roll(y, shift, axis=2)))
    s1 = ta.last_weights[0, 0]
    interior = slice(3 + shift, 40 - 3)
    assert np.allclose(s1[interior], np.roll(s0, shift)[interior], atol=1e-5)


@pytest.mark.parametrize("modality,length", [("EEG", 2560), ("ECG", 5120), ("EDA", 1280)])
def test_trunk_default_lengths(modality, length):
    cfg = M.ModalityConfig.default(modality)
    trunk = _init(M.Trunk(cfg, M.BlockKind.RESNET_CBAM))
    assert trunk(_x((1, cfg.in_channels, length))).shape == (1, 64, 10)


def test_trunk_rejects_wrong_length():
    trunk = _init(M.Trunk(M.ModalityConfig.default("EDA"), M.BlockKind.RESNET_CBAM))
    with pytest.raises(nn.ShapeError):
        trunk(_x((1, 3, 1000)))


@pytest.mark.parametrize("use_gru,width", [(True, 192), (False, 64)])
def test_head_fc_width(use_gru, width):
    head = _init(M.Head(64, 2, use_gru, 64, 0.25))
    assert head.fc.weight.shape == (2, width)
    head.eval()
    assert head(_x((5, 64, 10))).shape == (5, 2)


def test_fusion_shapes_and_rows():
    fusion = _init(M.SelfAttentionFusion(96))
    seqs = [_x((2, 32, 10), s) for s in range(3)]
    out = fusion(seqs)
    assert out.shape == (2, 96, 10)
    assert fusion.last_weights.shape == (2, 10, 10)
    assert np.allclose(fusion.last_weights.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(fusion.last_weights >= 0)


def test_fusion_zero_value_is_identity():
    fusion = _init(M.SelfAttentionFusion(96))
    for lin in (fusion.value, fusion.out):
        lin.weight.data[...] = 0.0
        lin.bias.data[...] = 0.0
    seqs = [_x((2, 32, 10), s) for s in range(3)]
    assert np.array_equal(fusion(seqs).data, np.concatenate([s.data for s in seqs], axis=1))


def test_fusion_length_mismatch():
    fusion = _init(M.SelfAttentionFusion(64))
    with pytest.raises(nn.ShapeError):
        fusion([_x((1, 32, 10)), _x((1, 32, 9))])


def expected_parameter_count(cfg):
    """Sum of declared layer shapes, written out independently of the module tree."""
    total = 0
    for m in cfg.modalities:
        f, r = m.feature_maps, m.cbam_reduction
        branch = f // len(m.kernels)
        total += sum(branch * m.in_channels * k + 2 * branch for k in m.kernels)
        if cfg.block_kind.separable:
            convs = (f * 3 + f * f) + (f * 3 + f * f + f)
        else:
            convs = f * f * 3 + (f * f * 3 + f)
        block = 2 * f + 2 * f + convs + (f * f + f)
        if cfg.block_kind.attention:
            block += (f * (f // r) + f // r) + ((f // r) * f + f) + 2 * 7
        total += m.resnet_blocks * block
    d = cfg.fused_width
    if cfg.multimodal:
        total += 4 * d * d + 3 * d  # query, value and output biases
    h = cfg.modalities[0].gru_hidden
    gru_in = cfg.modalities[0].in_channels if cfg.modalities[0].gru_on_raw else d
    if cfg.use_gru:
        total += 2 * (3 * h * gru_in + 3 * h * h + 3 * h)
    total += (d + (2 * h if cfg.use_gru else 0)) * cfg.num_classes + cfg.num_classes
    return total


@pytest.mark.parametrize("cfg", [
    M.NetConfig.default(("EEG",)),
    M.NetConfig.default(("ECG",), 3, use_gru=False),
    M.NetConfig.default(("EDA",), block_kind="DSC"),
    M.NetConfig.default(("EEG", "ECG", "EDA"), 3),
    M.NetConfig.default(("EEG", "EDA"), block_kind="DSC+CBAM"),
    M.NetConfig((M.ModalityConfig.default("EEG", gru_on_raw=True),)),
])
def test_parameter_count_matches_shape_sum(cfg):
    assert M.build_model(cfg, 0).num_parameters() == expected_parameter_count(cfg)


def test_eeg_default_parameter_count_value():
    assert expected_parameter_count(M.NetConfig.default(("EEG",))) == 292914


def test_build_is_deterministic(tmp_path):
    cfg = M.NetConfig.default(("EEG", "ECG", "EDA"))
    a, b = M.build_model(cfg, 5), M.build_model(cfg, 5)
    a.save(tmp_path / "a.upn")
    b.save(tmp_path / "b.upn")
    assert (tmp_path / "a.upn").read_bytes() == (tmp_path / "b.upn").read_bytes()
    c = M.build_model(cfg, 6)
    assert not np.array_equal(c.state_dict()["head.fc.weight"], a.state_dict()["head.fc.weight"])


def test_multimodal_forward_finite():
    cfg = M.NetConfig.default(("EEG", "ECG", "EDA"), 3)
    model = M.build_model(cfg, 0).eval()
    batch = {m.modality: _x((2, m.in_channels, m.window_length), i) for i, m in enumerate(cfg.modalities)}
    logits = model(batch)
    assert logits.shape == (2, 3) and np.all(np.isfinite(logits.data))


def test_multimodal_needs_every_modality():
    model = M.build_model(M.NetConfig.default(("EEG", "EDA")), 0)
    with pytest.raises(nn.ShapeError):
        model({"EEG": _x((1, 4, 2560))})
    with pytest.raises(nn.ShapeError):
        model(_x((1, 4, 2560)))


def test_eval_forward_repeatable_and_not_scale_invariant():
    cfg = M.NetConfig((M.tiny_modality("EEG"),))
    model = M.build_model(cfg, 1)
    x = np.random.default_rng(0).standard_normal((4, 4, 640))
    model.train()
    model(x)  # populate running statistics
    model.eval()
    a, b = model(x).data, model(x).data
    assert np.array_equal(a, b)
    assert not np.allclose(model(2 * x).data, a)


def test_dropout_active_only_in_training():
    model = M.build_model(M.NetConfig((M.tiny_modality("EEG"),), dropout=0.5), 1)
    x = np.random.default_rng(0).standard_normal((4, 4, 640))
    model.train()
    assert not np.array_equal(model(x).data, model(x).data)


def test_gru_on_raw_forward():
    cfg = M.NetConfig((M.ModalityConfig("EDA", 3, 128, (13,), 3, 16, 8, 4, True, window_s=0.5),))
    model = M.build_model(cfg, 0).eval()
    assert model.head.gru.fwd.w_x.shape == (24, 3)
    assert model(_x((2, 3, 64))).shape == (2, 2)


def test_dsc_ablation_shape_contract():
    cfg = M.NetConfig((M.ModalityConfig.default("EEG", kernels=(64,)),), use_gru=False, block_kind="DSC")
    model = M.build_model(cfg, 0).eval()
    assert model.head.gru is None
    assert model.trunks[0](_x((1, 4, 2560))).shape == (1, 64, 10)
    assert model(_x((1, 4, 2560))).shape == (1, 2)


def test_checkpoint_sidecar_round_trip(tmp_path):
    cfg = M.NetConfig.default(("EEG", "EDA"), 3)
    model = M.build_model(cfg, 9)
    path = model.save(tmp_path / "net.upn")
    meta = json.loads(M.sidecar_path(path).read_text())
    assert meta["config"]["num_classes"] == 3
    back = M.load_model(path)
    assert back.config == cfg
    for k, v in model.state_dict().items():
        assert np.array_equal(back.state_dict()[k], v)


def micro_config(modalities=("EEG",), **kw):
    """Smallest network that still exercises every layer kind."""
    lengths = {Modality.EEG: (2, 256, 2), Modality.ECG: (3, 512, 3), Modality.EDA: (2, 128, 1)}
    mods = []
    for m in modalities:
        m = Modality.parse(m)
        cin, fs, blocks = lengths[m]
        mods.append(M.ModalityConfig(m, cin, fs, (3, 5), blocks, feature_maps=4, gru_hidden=3,
                                     cbam_reduction=2, window_s=32 / 256))
    return M.NetConfig(tuple(mods), dropout=0.0, **kw)


def _network_case(cfg):
    def make(rng):
        model = M.build_model(cfg, int(rng.integers(1 << 30)))
        model.train()
        batch = {m.modality: nn.Tensor(rng.standard_normal((3, m.in_channels, m.window_length)))
                 for m in cfg.modalities}
        targets = rng.integers(0, cfg.num_classes, 3)
        return (lambda: F.softmax_cross_entropy(model(batch), targets)), model.parameters()

    return make


@pytest.mark.parametrize("modalities,kw", [
    (("EEG",), {}),
    (("EEG",), dict(block_kind="DSC+CBAM")),
    (("EEG", "ECG", "EDA"), {}),
])
def test_full_network_gradient(f64, modalities, kw):
    cfg = micro_config(modalities, **kw)
    err = nn.grad_check_resampled(_network_case(cfg), nn.RngStream(17))
    assert err < 1e-3
