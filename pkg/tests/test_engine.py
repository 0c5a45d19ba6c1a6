import numpy as np
import pytest

from meshseg.engine import (
    FeatureMap,
    MemoryBudget,
    argmax_labels,
    batchnorm_eval,
    conv3d_fast,
    conv3d_ref,
    dropout_eval,
    relu,
    run_model,
    unlimited_budget,
    volume_to_feature,
)
from meshseg.errors import BudgetExceeded, NegativeVariance, ShapeMismatch
from meshseg.model import BATCHNORM3D, CONV3D, LayerSpec

from conftest import make_volume
from oracles import conv3d_oracle
from test_model import gwm_model, toy_model


def conv_layer(cin, cout, kernel=(3, 3, 3), dilation=(1, 1, 1), padding=None):
    if padding is None:
        padding = dilation
    return LayerSpec(CONV3D, cin, cout, kernel=kernel, dilation=dilation, padding=padding)


def random_case(rng, cin, cout, extent, d, k=3):
    x = rng.standard_normal((cin, extent, extent, extent)).astype(np.float32)
    w = rng.standard_normal((cout, cin, k, k, k)).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    layer = conv_layer(cin, cout, kernel=(k, k, k), dilation=(d, d, d))
    return FeatureMap(x), layer, (w, b)


def test_identity_kernel_exact(rng):
    for d in (1, 2, 5):
        x = rng.standard_normal((2, 6, 6, 6)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3, 3), np.float32)
        w[0, 0, 1, 1, 1] = 1.0
        w[1, 1, 1, 1, 1] = 1.0
        b = np.zeros(2, np.float32)
        layer = conv_layer(2, 2, dilation=(d, d, d))
        out = conv3d_ref(FeatureMap(x), layer, (w, b))
        np.testing.assert_array_equal(out.data, x)
        out = conv3d_fast(FeatureMap(x), layer, (w, b))
        np.testing.assert_array_equal(out.data, x)


def test_all_ones_kernel_tap_counts():
    x = np.ones((1, 3, 3, 3), np.float32)
    w = np.ones((1, 1, 3, 3, 3), np.float32)
    b = np.zeros(1, np.float32)
    out = conv3d_ref(FeatureMap(x), conv_layer(1, 1), (w, b))
    assert out.data[0, 1, 1, 1] == 27.0
    assert out.data[0, 0, 0, 0] == 8.0
    assert out.data[0, 0, 1, 1] == 18.0


@pytest.mark.parametrize("d", [1, 2, 4])
def test_ref_matches_oracle(rng, d):
    fm, layer, (w, b) = random_case(rng, cin=5, cout=3, extent=8, d=d)
    out = conv3d_ref(fm, layer, (w, b))
    expect = conv3d_oracle(fm.data, w, b, (d, d, d), (d, d, d))
    assert np.abs(out.data - expect).max() < 1e-4


def test_ref_matches_oracle_anisotropic(rng):
    # distinct per-axis dilation/padding guards axis-order mistakes
    x = rng.standard_normal((2, 9, 8, 7)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    layer = conv_layer(2, 3, dilation=(1, 2, 3), padding=(1, 2, 3))
    out = conv3d_ref(FeatureMap(x), layer, (w, b))
    # layer tuples are (x, y, z); the oracle takes (z, y, x)
    expect = conv3d_oracle(x, w, b, (3, 2, 1), (3, 2, 1))
    assert out.data.shape == expect.shape
    assert np.abs(out.data - expect).max() < 1e-4


def test_unpadded_conv_shrinks(rng):
    x = rng.standard_normal((1, 7, 7, 7)).astype(np.float32)
    w = rng.standard_normal((1, 1, 3, 3, 3)).astype(np.float32)
    b = np.zeros(1, np.float32)
    layer = conv_layer(1, 1, dilation=(2, 2, 2), padding=(0, 0, 0))
    out = conv3d_ref(FeatureMap(x), layer, (w, b))
    assert out.data.shape == (1, 3, 3, 3)
    expect = conv3d_oracle(x, w, b, (2, 2, 2), (0, 0, 0))
    assert np.abs(out.data - expect).max() < 1e-4


def test_fast_equals_ref_randomized(rng):
    for _ in range(20):
        cin = int(rng.integers(1, 5))
        cout = int(rng.integers(1, 5))
        d = int(rng.integers(1, 9))
        extent = int(rng.integers(4, 13))
        fm, layer, wb = random_case(rng, cin, cout, extent, d)
        a = conv3d_ref(fm, layer, wb)
        bb = conv3d_fast(fm, layer, wb)
        np.testing.assert_array_equal(a.data, bb.data)


def test_conv_channel_mismatch(rng):
    fm, _, wb = random_case(rng, 2, 2, 5, 1)
    with pytest.raises(ShapeMismatch):
        conv3d_ref(fm, conv_layer(3, 2), wb)


def test_conv_too_small_input(rng):
    x = rng.standard_normal((1, 2, 2, 2)).astype(np.float32)
    layer = conv_layer(1, 1, dilation=(4, 4, 4), padding=(0, 0, 0))
    with pytest.raises(ShapeMismatch):
        conv3d_ref(FeatureMap(x), layer, (np.zeros((1, 1, 3, 3, 3), np.float32),
                                          np.zeros(1, np.float32)))


# --- batchnorm / relu / dropout ----------------------------------------------

def bn_layer(c, eps=0.0):
    return LayerSpec(BATCHNORM3D, c, c, epsilon=eps)


def test_batchnorm_identity_params(rng):
    x = rng.standard_normal((3, 4, 4, 4)).astype(np.float32)
    params = (np.ones(3, np.float32), np.zeros(3, np.float32),
              np.zeros(3, np.float32), np.ones(3, np.float32))
    out = batchnorm_eval(FeatureMap(x), bn_layer(3), params)
    np.testing.assert_array_equal(out.data, x)


def test_batchnorm_closed_form():
    x = np.full((1, 1, 1, 1), 5.0, np.float32)
    params = (np.array([2.0], np.float32), np.array([3.0], np.float32),
              np.array([1.0], np.float32), np.array([4.0], np.float32))
    out = batchnorm_eval(FeatureMap(x), bn_layer(1), params)
    assert out.data[0, 0, 0, 0] == pytest.approx(7.0)


def test_batchnorm_matches_float64_oracle(rng):
    c = 4
    x = rng.standard_normal((c, 5, 5, 5)).astype(np.float32)
    scale = rng.standard_normal(c).astype(np.float32)
    shift = rng.standard_normal(c).astype(np.float32)
    mean = rng.standard_normal(c).astype(np.float32)
    var = rng.uniform(0.1, 2.0, c).astype(np.float32)
    layer = bn_layer(c, eps=1e-5)
    out = batchnorm_eval(FeatureMap(x), layer, (scale, shift, mean, var))
    x64 = x.astype(np.float64)
    expect = (scale.astype(np.float64)[:, None, None, None]
              * (x64 - mean.astype(np.float64)[:, None, None, None])
              / np.sqrt(var.astype(np.float64)[:, None, None, None] + 1e-5)
              + shift.astype(np.float64)[:, None, None, None])
    assert np.abs(out.data - expect).max() < 1e-5


def test_batchnorm_negative_variance(rng):
    x = rng.standard_normal((1, 2, 2, 2)).astype(np.float32)
    params = (np.ones(1, np.float32), np.zeros(1, np.float32),
              np.zeros(1, np.float32), np.array([-0.5], np.float32))
    with pytest.raises(NegativeVariance):
        batchnorm_eval(FeatureMap(x), bn_layer(1), params)


def test_relu_and_dropout(rng):
    x = np.array([[-1.0, 0.0, 2.0]], np.float32).reshape(1, 1, 1, 3)
    out = relu(FeatureMap(x))
    np.testing.assert_array_equal(out.data.reshape(-1), [0.0, 0.0, 2.0])
    neg = relu(FeatureMap(-np.abs(rng.standard_normal((2, 3, 3, 3)).astype(np.float32)) - 0.1))
    assert np.all(neg.data == 0)
    m = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
    assert dropout_eval(FeatureMap(m)).data.tobytes() == m.tobytes()


# --- run_model ------------------------------------------------------------------

def test_run_model_shapes_and_determinism(rng):
    m = gwm_model(seed=3)
    x = rng.random((1, 16, 16, 16)).astype(np.float32)
    out1 = run_model(m, FeatureMap(x.copy()), unlimited_budget())
    out2 = run_model(m, FeatureMap(x.copy()), unlimited_budget())
    assert out1.data.shape == (3, 16, 16, 16)
    assert out1.data.tobytes() == out2.data.tobytes()
    assert np.all(np.isfinite(out1.data))


def test_run_model_two_buffer_invariant(rng):
    m = gwm_model()
    budget = unlimited_budget()
    run_model(m, FeatureMap(rng.random((1, 8, 8, 8)).astype(np.float32)), budget)
    assert budget.max_live_buffers <= 2
    assert budget.live_bytes == 0
    assert budget.live_buffers == 0


def test_run_model_high_water_bound(rng):
    m = gwm_model()
    extent = 32
    budget = unlimited_budget()
    run_model(m, FeatureMap(rng.random((1, extent, extent, extent)).astype(np.float32)), budget)
    act5 = 5 * extent ** 3 * 4
    assert budget.high_water <= m.weights.nbytes + 2 * act5


def test_run_model_budget_exceeded_layer1(rng):
    m = gwm_model()
    extent = 32
    act5 = 5 * extent ** 3 * 4
    budget = MemoryBudget(peak_bytes=act5 - 1)  # cannot hold one 5-channel activation
    with pytest.raises(BudgetExceeded):
        run_model(m, FeatureMap(rng.random((1, extent, extent, extent)).astype(np.float32)), budget)
    assert budget.live_bytes == 0  # accounting unwound


def test_run_model_ref_path_matches_fast(rng):
    m = toy_model()
    x = rng.random((1, 10, 10, 10)).astype(np.float32)
    a = run_model(m, FeatureMap(x.copy()), unlimited_budget(), fast=True)
    b = run_model(m, FeatureMap(x.copy()), unlimited_budget(), fast=False)
    np.testing.assert_array_equal(a.data, b.data)


def test_run_model_rejects_multichannel(rng):
    with pytest.raises(ShapeMismatch):
        run_model(gwm_model(), FeatureMap(rng.random((2, 8, 8, 8)).astype(np.float32)),
                  unlimited_budget())


# --- argmax ---------------------------------------------------------------------

def test_argmax_basic_and_ties():
    scores = np.zeros((3, 1, 1, 2), np.float32)
    scores[:, 0, 0, 0] = [0.1, 0.9, 0.3]
    scores[:, 0, 0, 1] = [0.5, 0.5, 0.2]
    labels = argmax_labels(FeatureMap(scores))
    assert labels.data[0, 0, 0] == 1
    assert labels.data[1, 0, 0] == 0  # tie goes to the lowest index


def test_argmax_matches_scan_oracle(rng):
    scores = rng.standard_normal((3, 6, 5, 4)).astype(np.float32)
    labels = argmax_labels(FeatureMap(scores))
    for x in range(4):
        for y in range(5):
            for z in range(6):
                best, best_c = -np.inf, 0
                for c in range(3):
                    v = scores[c, z, y, x]
                    if v > best:
                        best, best_c = v, c
                assert labels.data[x, y, z] == best_c


def test_volume_to_feature_axis_order(rng):
    data = rng.standard_normal((3, 4, 5)).astype(np.float32)
    fm = volume_to_feature(make_volume(data))
    assert fm.data.shape == (1, 5, 4, 3)
    assert fm.extents == (3, 4, 5)
    assert fm.data[0, 2, 1, 0] == data[0, 1, 2]
