import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from soilspec.losses import (
    LossError,
    QuantileCodec,
    codec_decode,
    codec_encode,
    codec_fit,
    hybrid_decode,
    hybrid_loss,
    l1_loss,
    l2_loss,
    split_hybrid_output,
)
from soilspec.metrics import MetricError, mae, metric, mse, pearson, r2, rmse, score_table

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# --- l1 / l2 ---------------------------------------------------------------


def test_simple_losses():
    assert l1_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))[0] == 0.0
    assert l1_loss(np.zeros(2), np.array([1.0, -1.0]))[0] == 1.0
    assert l2_loss(np.zeros(2), np.array([1.0, -1.0]))[0] == 1.0
    _, g = l2_loss(np.array([2.0]), np.array([0.0]))
    np.testing.assert_array_equal(g, [4.0])
    _, g = l1_loss(np.array([2.0, -1.0]), np.array([0.0, 0.0]))
    np.testing.assert_array_equal(g, [0.5, -0.5])


def test_losses_reject_bad_input():
    with pytest.raises(LossError):
        l1_loss(np.zeros(0), np.zeros(0))
    with pytest.raises(LossError):
        l2_loss(np.zeros(2), np.zeros(3))


def test_l2_gradient_finite_difference(rng):
    pred, target = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    _, g = l2_loss(pred, target)
    eps = 1e-6
    for idx in np.ndindex(pred.shape):
        p = pred.copy()
        p[idx] += eps
        up = l2_loss(p, target)[0]
        p[idx] -= 2 * eps
        down = l2_loss(p, target)[0]
        assert abs((up - down) / (2 * eps) - g[idx]) < 1e-6


# --- codec -----------------------------------------------------------------


def test_codec_deciles_boundary():
    codec = codec_fit(np.arange(1.0, 101.0), 10)
    edges = codec.edges[0]
    np.testing.assert_allclose(edges, np.quantile(np.arange(1.0, 101.0), np.linspace(0, 1, 11)))
    c, r = codec_encode(codec, np.array([edges[3]]))
    assert (int(c[0]), float(r[0])) == (3, 0.0)


def test_codec_worked_example():
    codec = QuantileCodec((np.array([0.0, 0.25, 0.5, 0.75, 1.0]),), 4)
    c, r = codec.encode(np.array([0.375]))
    assert (int(c[0]), float(r[0])) == (1, 0.5)
    assert codec_decode(codec, c, r)[0] == 0.375


def test_codec_fit_uniform_matches_worked_example():
    values = np.linspace(0.0, 1.0, 10_001)
    codec = codec_fit(values, 4)
    np.testing.assert_allclose(codec.edges[0], [0, 0.25, 0.5, 0.75, 1.0], atol=1e-12)


def test_codec_roundtrip_random(rng):
    train = rng.lognormal(size=(1000, 3)) * [1.0, 50.0, 0.01]
    codec = codec_fit(train, 10)
    c, r = codec.encode(train)
    back = codec.decode(c, r)
    assert np.max(np.abs(back - train) / np.abs(train)) < 1e-9
    assert c.min() >= 0 and c.max() <= 9


def test_codec_clamps_out_of_range():
    codec = codec_fit(np.arange(10.0), 5)
    c, r = codec.encode(np.array([-100.0]))
    assert (c[0], r[0]) == (0, 0.0)
    c, r = codec.encode(np.array([100.0]))
    assert c[0] == 4 and 0.0 <= r[0] <= 1.0


def test_codec_fit_too_few_distinct():
    with pytest.raises(LossError):
        codec_fit(np.array([1.0, 1.0, 2.0, 2.0, 3.0]), 4)


def test_codec_merges_tied_quantiles():
    # heavy tie at zero: several deciles coincide and collapse
    values = np.concatenate([np.zeros(600), np.arange(1.0, 401.0)])
    codec = codec_fit(values, 10)
    assert codec.bins_per_var[0] < 10
    assert np.all(np.diff(codec.edges[0]) > 0)


def test_codec_json_roundtrip(tmp_path):
    codec = codec_fit(np.random.default_rng(0).normal(size=(50, 2)), 5, ("OC", "N"))
    codec.to_json(tmp_path / "c.json")
    back = QuantileCodec.from_json(tmp_path / "c.json")
    assert back.to_dict() == codec.to_dict()
    assert back.to_dict()[0]["variable"] == "OC"


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=20, max_size=80, unique=True), finite, finite)
def test_codec_encode_monotone(train, a, b):
    codec = codec_fit(np.array(train), 5)
    v1, v2 = sorted([a, b])
    c1, r1 = codec.encode(np.array([v1]))
    c2, r2_ = codec.encode(np.array([v2]))
    assert (c1[0], r1[0]) <= (c2[0], r2_[0])


# --- hybrid loss -----------------------------------------------------------


def test_hybrid_perfect_heads():
    c = np.array([[2, 0]])
    r = np.array([[0.3, 0.9]])
    logits = np.full((1, 2, 4), -50.0)
    logits[0, 0, 2] = logits[0, 1, 0] = 50.0
    loss, _, _ = hybrid_loss(logits, r.copy(), c, r)
    assert loss < 1e-12


def test_hybrid_uniform_logits():
    loss, _, _ = hybrid_loss(np.zeros((3, 1, 4)), np.zeros((3, 1)), np.array([[0], [1], [3]]), np.zeros((3, 1)))
    assert abs(loss - math.log(4)) < 1e-12


def test_hybrid_decode_worked_example():
    codec = QuantileCodec((np.array([0.0, 0.25, 0.5, 0.75, 1.0]),), 4)
    logits = np.array([[[0.0, 9.0, 0.0, 0.0]]])
    assert hybrid_decode(codec, logits, np.array([[0.5]]))[0, 0] == 0.375


def test_hybrid_decode_clamps_offset():
    codec = QuantileCodec((np.array([0.0, 1.0, 2.0]),), 2)
    out = hybrid_decode(codec, np.array([[[5.0, 0.0]]]), np.array([[3.0]]))
    assert out[0, 0] < 1.0


def test_hybrid_masks_missing_bins():
    logits = np.zeros((1, 1, 4))
    loss, g, _ = hybrid_loss(logits, np.zeros((1, 1)), np.array([[0]]), np.zeros((1, 1)), bins_per_var=[2])
    assert abs(loss - math.log(2)) < 1e-12
    assert g[0, 0, 2] == 0.0 and g[0, 0, 3] == 0.0


def test_hybrid_gradient_finite_difference(rng):
    batch, n_vars, n_bins = 5, 3, 4
    logits = rng.normal(size=(batch, n_vars, n_bins))
    r_pred = rng.uniform(size=(batch, n_vars))
    c = rng.integers(0, n_bins, size=(batch, n_vars))
    r = rng.uniform(size=(batch, n_vars))
    # keep the |.| term away from its kink
    r_pred[np.abs(r_pred - r) < 1e-3] += 0.01
    loss, g_logits, g_r = hybrid_loss(logits, r_pred, c, r, weight=0.7)
    eps = 1e-6

    def f(lg, rp):
        return hybrid_loss(lg, rp, c, r, weight=0.7)[0]

    num_l = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += eps
        down[idx] -= eps
        num_l[idx] = (f(up, r_pred) - f(down, r_pred)) / (2 * eps)
    num_r = np.zeros_like(r_pred)
    for idx in np.ndindex(r_pred.shape):
        up, down = r_pred.copy(), r_pred.copy()
        up[idx] += eps
        down[idx] -= eps
        num_r[idx] = (f(logits, up) - f(logits, down)) / (2 * eps)
    for a, n in ((g_logits, num_l), (g_r, num_r)):
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-5)
        assert rel.max() < 1e-4


def test_hybrid_shape_mismatch():
    with pytest.raises(LossError):
        hybrid_loss(np.zeros((2, 3, 4)), np.zeros((2, 2)), np.zeros((2, 3), int), np.zeros((2, 3)))
    with pytest.raises(LossError):
        split_hybrid_output(np.zeros((2, 10)), 3, 4)


def test_split_hybrid_layout():
    out = np.arange(2 * 15, dtype=float).reshape(2, 15)
    logits, r = split_hybrid_output(out, 3, 4)
    assert logits.shape == (2, 3, 4) and r.shape == (2, 3)
    np.testing.assert_array_equal(logits[0, 1], [4, 5, 6, 7])
    np.testing.assert_array_equal(r[0], [12, 13, 14])


# --- metrics ---------------------------------------------------------------


def test_metrics_perfect_prediction(rng):
    y = rng.normal(size=20)
    assert mae(y, y) == 0 and mse(y, y) == 0 and rmse(y, y) == 0
    assert r2(y, y) == 1.0
    assert abs(pearson(y, y) - 1.0) < 1e-12


def test_r2_mean_predictor(rng):
    y = rng.normal(size=30)
    assert abs(r2(np.full(30, y.mean()), y)) < 1e-12


def test_metrics_hand_example():
    x, y = np.array([1.0, 2.0, 3.0]), np.array([2.0, 2.0, 2.0])
    assert mae(x, y) == pytest.approx(2 / 3, abs=1e-15)
    assert mse(x, y) == pytest.approx(2 / 3, abs=1e-15)
    assert rmse(x, y) == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    with pytest.raises(MetricError):
        pearson(x, y)
    with pytest.raises(MetricError):
        r2(x, y)


def test_metric_preconditions():
    with pytest.raises(MetricError):
        r2(np.array([1.0]), np.array([2.0]))
    with pytest.raises(MetricError):
        mae(np.zeros(2), np.zeros(3))
    with pytest.raises(MetricError):
        metric("nope")


def test_score_table_marks_undefined_as_nan():
    pred = np.array([[1.0, 1.0], [2.0, 1.0], [3.0, 1.0]])
    target = np.array([[1.0, 0.0], [2.0, 1.0], [4.0, 2.0]])
    table = score_table(pred, target)
    assert set(table) == {"mae", "mse", "rmse", "r2", "pearson"}
    assert np.isnan(table["pearson"][1]) and np.isfinite(table["r2"][1])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=finite), st.data())
def test_metric_properties(y, data):
    x = data.draw(arrays(np.float64, y.shape, elements=finite))
    assert abs(rmse(x, y) ** 2 - mse(x, y)) <= 1e-12 * max(mse(x, y), 1e-300)
    if np.ptp(y) > 1e-6:
        assert r2(x, y) <= 1.0
    if np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3:
        p = pearson(x, y)
        a = data.draw(st.floats(0.1, 10))
        b = data.draw(st.floats(-100, 100))
        assert abs(pearson(a * x + b, y) - p) < 1e-9
        assert abs(pearson(x, a * y + b) - p) < 1e-9
