import numpy as np
import pytest

from soilspec.arch import (
    BEST_MODEL,
    REAL_CASE_MODEL,
    ArchError,
    BlockSpec,
    NetSpec,
    block_fov,
    block_param_count,
    build_network,
    closed_form_param_count,
    count_params,
    filters_for_block,
    net_fov,
    num_blocks,
    receptive_field,
    stage_param_counts,
    stage_shapes,
    summary,
)
from soilspec.nn.checkpoint import checkpoint_bytes, parse_checkpoint

BEST_SHAPES = [(1, 2048), (16, 1024), (32, 512), (64, 256), (128, 128), (128, 64), (128, 32), (128, 16),
               (128, 8), (128, 4), (70,), (12,)]
REAL_SHAPES = [(1, 128), (16, 64), (32, 32), (64, 16), (128, 8), (128, 4), (70,), (12,)]


def test_num_blocks():
    assert num_blocks(2048, 4) == 9
    assert num_blocks(128, 4) == 5
    with pytest.raises(ArchError):
        num_blocks(64, 64)
    with pytest.raises(ArchError, match="must be a power of 2"):
        num_blocks(100, 4)


def test_filters_for_block():
    assert filters_for_block(0, 4, 7) == 16
    assert filters_for_block(3, 4, 7) == 128
    assert filters_for_block(8, 4, 7) == 128
    assert filters_for_block(0, 0, 0) == 1
    seq = [filters_for_block(i, 4, 7) for i in range(9)]
    assert seq == [16, 32, 64, 128, 128, 128, 128, 128, 128]


def test_block_param_count_examples():
    assert block_param_count(BlockSpec(1, 16, 1, True), with_bias=False) == 896
    assert block_param_count(BlockSpec(1, 16, 1, True), with_bias=True) == 928
    assert block_param_count(BlockSpec(8, 8, 0, False), with_bias=False) == 256


def test_fov_formulas():
    assert block_fov(1) == 7
    assert block_fov(0) == 4
    assert net_fov(9, 1) == 126


def test_receptive_field_diagnostic():
    # one downsampling conv alone sees its kernel
    assert receptive_field(1, 0) == 4
    # conv4/s2 then conv3/s1 on the halved grid: 4 + 2*2
    assert receptive_field(1, 1) == 8
    assert receptive_field(9, 1) != net_fov(9, 1)


def test_best_model():
    model = build_network(BEST_MODEL)
    assert count_params(model) == 723_974
    assert stage_shapes(model) == BEST_SHAPES


def test_real_case_model():
    model = build_network(REAL_CASE_MODEL)
    assert count_params(model) == 262_150
    assert stage_shapes(model) == REAL_SHAPES


def test_best_model_stage_counts():
    counts = stage_param_counts(build_network(BEST_MODEL))
    assert counts == [0, 928, 5312, 20864, 82688] + [115456] * 5 + [36050, 852]


def test_minimal_network():
    spec = NetSpec(n_in=2, n_out=1, p_min=0, p_max=0, n_refine=0, use_norm=False, proj_hidden=0, n_vars=1)
    model = build_network(spec)
    assert stage_shapes(model) == [(1, 2), (1, 1), (1,)]
    # conv weight 1x1x4 + bias 1, linear weight 1x1 + bias 1
    assert len(model.params) == 4
    assert count_params(model) == 4 + 1 + 1 + 1


def test_closed_form_matches_walk_random_specs():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n_out = 2 ** int(rng.integers(0, 4))
        n_in = n_out * 2 ** int(rng.integers(1, 7))
        p_min = int(rng.integers(0, 5))
        spec = NetSpec(n_in=n_in, n_out=n_out, p_min=p_min, p_max=p_min + int(rng.integers(0, 4)),
                       n_refine=int(rng.integers(0, 3)), use_norm=bool(rng.integers(0, 2)),
                       leak=float(rng.choice([0.0, 0.2])), proj_hidden=int(rng.choice([0, 5, 70])),
                       n_vars=int(rng.integers(1, 13)))
        model = build_network(spec, dtype=np.float32)
        assert count_params(model) == closed_form_param_count(spec)
        lengths = [s[-1] for s in stage_shapes(model)[:spec.n_blocks + 1]]
        assert lengths == [n_in // 2 ** i for i in range(spec.n_blocks + 1)]
        assert lengths[-1] == n_out


def test_projection_without_norm():
    spec = NetSpec(n_in=128, use_norm=False)
    model = build_network(spec)
    assert count_params(model) == closed_form_param_count(spec)
    assert not any(layer.kind == "batchnorm" for layer in model.layers)


def test_relu_when_leak_zero():
    model = build_network(NetSpec(n_in=16, leak=0.0, p_min=1, p_max=2))
    leaks = {layer.leak for layer in model.layers if layer.kind == "leaky_relu"}
    assert leaks == {0.0}


def test_invalid_specs():
    with pytest.raises(ArchError):
        NetSpec(n_in=100)
    with pytest.raises(ArchError):
        NetSpec(n_in=64, p_min=5, p_max=3)
    with pytest.raises(ArchError):
        NetSpec(n_in=64, leak=1.0)


def test_rebuild_is_byte_identical_after_checkpoint():
    spec = NetSpec(n_in=64, p_min=2, p_max=4, proj_hidden=8, n_vars=3)
    a = build_network(spec, seed=5)
    loaded, _ = parse_checkpoint(checkpoint_bytes(a))
    b = build_network(spec, seed=5)
    assert checkpoint_bytes(loaded) == checkpoint_bytes(b)


def test_netspec_dict_roundtrip(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text('{"n_in": 2048, "n_out": 4, "p_min": 4, "p_max": 7, "n_vars": 12}')
    assert NetSpec.from_json(path) == BEST_MODEL
    assert NetSpec.from_dict(BEST_MODEL.to_dict()) == BEST_MODEL


def test_summary_table():
    text = summary(build_network(BEST_MODEL))
    assert "Total parameters: 723,974" in text
    for row in ("16 x 1024", "128 x 4", "Linear+BN+LReLU", "115,456", "36,050", "852"):
        assert row in text
    assert text.count("Encoding") == 9
