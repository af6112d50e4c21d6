import numpy as np
import pytest

from qunet.exceptions import ConfigurationError, ShapeError
from qunet.models import (
    TABLE_TARGETS, IdentityBottleneck, ModelConfig, Scale, SegmentationNet, Variant, build_model,
    count_params, format_reconciliation, params_by_layer, reconcile_params,
)


@pytest.mark.parametrize("key", list(TABLE_TARGETS))
def test_table_counts(key):
    variant, scale = key
    assert count_params(build_model(ModelConfig(variant, scale))) == TABLE_TARGETS[key]


def test_quantum_counts_every_scale():
    for scale in Scale:
        assert count_params(build_model(ModelConfig("qunet-4-2", scale)))[1] == 8
        if scale is not Scale.MEDIUM:
            assert count_params(build_model(ModelConfig("qunet-8-1", scale)))[1] == 4


def test_reconciliation_default_and_literal():
    rows = reconcile_params()
    assert all(r.residual == 0 and not r.layer_residuals for r in rows)
    literal = reconcile_params(upsample_kernel=2, bottleneck_convs=2)
    for r in literal:
        # every residual is accounted for by a named layer
        assert sum(r.layer_residuals.values()) == r.residual != 0
    text = format_reconciliation(literal)
    assert "dec1.up" in text and "bottleneck.conv2" in text


def test_merge_conv_count():
    layers = params_by_layer(build_model(ModelConfig("qunet-4-2", "tiny")))
    assert layers["qufex.merge"] == 8 * 8 * 9


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig("qunet-8-1", "medium")
    with pytest.raises(ConfigurationError):
        ModelConfig(input_size=48)
    with pytest.raises(ConfigurationError):
        ModelConfig(input_size=16)
    with pytest.raises(ConfigurationError):
        ModelConfig(encoder_filters=(4, 4, 4))
    with pytest.raises(ConfigurationError):
        ModelConfig(upsample_kernel=4)
    with pytest.raises(ValueError):
        ModelConfig("resnet")
    with pytest.raises(ShapeError):
        build_model(ModelConfig("qunet-8-1", "tiny", input_size=32))


def test_config_dict_roundtrip():
    cfg = ModelConfig("qunet-4-2", "small", input_size=32, closing_hadamard=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("variant,size", [("unet", 32), ("qunet-4-2", 32), ("qunet-8-1", 64)])
def test_forward_shape_range_and_determinism(variant, size):
    cfg = ModelConfig(variant, "tiny", input_size=size)
    x = np.random.default_rng(0).uniform(size=(2, 3, size, size))
    a = build_model(cfg, seed=3).forward(x)
    b = build_model(cfg, seed=3).forward(x)
    assert a.shape == (2, 1, size, size)
    assert np.all((a > 0) & (a < 1))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, build_model(cfg, seed=4).forward(x))


def test_forward_rejects_wrong_input():
    model = build_model(ModelConfig(input_size=32))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 3, 64, 64)))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((3, 32, 32)))


def test_qunet_8_1_four_circuits_per_sample():
    model = build_model(ModelConfig("qunet-8-1", "tiny", input_size=64))
    model.forward(np.zeros((3, 3, 64, 64)))
    assert model.qufex.circuit_calls == 3 * 4


def test_theta_initialized_in_full_turn():
    model = build_model(ModelConfig("qunet-4-2", "tiny", input_size=32), seed=0)
    for name in model.quantum_parameter_names():
        t = model.parameters()[name].data
        assert np.all((t >= 0) & (t < 2 * np.pi))


def test_identity_ablation_keeps_shapes_and_drops_quantum_params():
    model = build_model(ModelConfig("qunet-4-2", "tiny", input_size=32))
    model.replace_bottleneck(IdentityBottleneck(8))
    assert model.quantum_parameter_names() == []
    out = model.forward(np.zeros((1, 3, 32, 32)))
    assert out.shape == (1, 1, 32, 32)
    model.backward(np.ones_like(out))
    with pytest.raises(ShapeError):
        model.replace_bottleneck(IdentityBottleneck(4))


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = build_model(ModelConfig("qunet-4-2", "tiny", input_size=32), seed=7)
    for p in model.parameters().values():
        p.data = p.data + np.random.default_rng(1).normal(size=p.shape)
    json_path, bin_path = model.save(tmp_path / "ckpt")
    assert json_path.exists() and bin_path.stat().st_size == 8 * sum(count_params(model))
    loaded = SegmentationNet.load(tmp_path / "ckpt")
    for (na, a), (nb, b) in zip(model.parameters().items(), loaded.parameters().items()):
        assert na == nb and a.data.tobytes() == b.data.tobytes()
    x = np.random.default_rng(2).uniform(size=(1, 3, 32, 32))
    assert np.array_equal(model.forward(x), loaded.forward(x))


def test_truncated_checkpoint_rejected(tmp_path):
    model = build_model(ModelConfig(input_size=32))
    _, bin_path = model.save(tmp_path / "m")
    bin_path.write_bytes(bin_path.read_bytes()[:-8])
    with pytest.raises(ShapeError):
        SegmentationNet.load(tmp_path / "m")


def test_variant_enum_values():
    assert [v.value for v in Variant] == ["unet", "qunet-8-1", "qunet-4-2"]


def test_bottleneck_input_is_eight_maps_of_two_by_two():
    model = build_model(ModelConfig("unet", "tiny"))
    seen = {}
    original = model.bottleneck.forward

    def spy(x):
        seen["shape"] = x.shape
        return original(x)

    model.bottleneck.forward = spy
    model.forward(np.zeros((1, 3, 64, 64)))
    assert seen["shape"] == (1, 8, 2, 2)


def test_qunet_4_2_layers_see_all_maps():
    model = build_model(ModelConfig("qunet-4-2", "tiny"))
    for layer in model.qufex.layers:
        assert layer.group_size is None  # one group spanning every channel
    model.forward(np.zeros((1, 3, 64, 64)))
    assert model.qufex.circuit_calls == 2 * (8 * 2 * 2 // 4)
