import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gcaresunet import numerics as N
from gcaresunet.errors import ConfigError, NumericError, ShapeError, StateError

from . import oracles


def t(a):
    return torch.from_numpy(np.asarray(a, dtype=np.float64))


@pytest.mark.parametrize("stride,pad,groups,k", [(1, 0, 1, 1), (1, 1, 1, 3), (2, 1, 2, 3),
                                                 (2, 3, 1, 7), (1, 0, 4, 1)])
def test_conv2d_matches_loops(rng, stride, pad, groups, k):
    x = rng.standard_normal((2, 4, 7, 6))
    w = rng.standard_normal((8, 4 // groups, k, k))
    b = rng.standard_normal(8)
    spec = N.ConvSpec(4, 8, k, stride, pad, groups, bias=True)
    got = N.conv2d(t(x), spec, t(w), t(b)).numpy()
    np.testing.assert_allclose(got, oracles.conv2d(x, w, b, stride, pad, groups), atol=1e-10)
    assert got.shape[2:] == spec.output_hw(7, 6)


def test_conv_spec_params_and_validation():
    assert N.ConvSpec(64, 256, 1).num_params() == 16384
    assert N.ConvSpec(3, 64, 7, 2, 3).num_params() == 9408
    assert N.ConvSpec(8, 8, 3, groups=2, bias=True).num_params() == 8 * 4 * 9 + 8
    with pytest.raises(ShapeError):
        N.ConvSpec(6, 8, groups=4)
    with pytest.raises(ConfigError):
        N.ConvSpec(4, 4, stride=0)


def test_conv2d_rejects_bad_inputs():
    spec = N.ConvSpec(2, 2, 3, padding=0)
    w = torch.zeros(spec.weight_shape)
    with pytest.raises(ShapeError):
        N.conv2d(torch.zeros(1, 3, 5, 5), spec, w)
    with pytest.raises(ShapeError):
        N.conv2d(torch.zeros(2, 5, 5), spec, w)
    with pytest.raises(ShapeError):
        N.conv2d(torch.zeros(1, 2, 2, 2), spec, w)
    with pytest.raises(ShapeError):
        N.conv2d(torch.zeros(1, 2, 5, 5), spec, w, torch.zeros(2))
    with pytest.raises(NumericError):
        N.conv2d(torch.zeros(1, 2, 5, 5), spec, torch.full(spec.weight_shape, float("nan")))


def test_batch_norm_eval_and_train(rng):
    x = rng.standard_normal((3, 5, 4, 4)) * 2 + 1
    g, b = rng.standard_normal(5), rng.standard_normal(5)
    m, v = rng.standard_normal(5), rng.uniform(0.5, 2, 5)
    st_eval = N.BatchNormState(t(g), t(b), t(m), t(v), training=False)
    np.testing.assert_allclose(N.batch_norm(t(x), st_eval).numpy(),
                               oracles.batch_norm(x, g, b, m, v), atol=1e-10)
    st_train = N.BatchNormState(t(g), t(b), t(np.zeros(5)), t(np.ones(5)))
    np.testing.assert_allclose(N.batch_norm(t(x), st_train).numpy(),
                               oracles.batch_norm(x, g, b), atol=1e-10)
    # running statistics move toward the batch statistics with momentum 0.1
    np.testing.assert_allclose(st_train.running_mean.numpy(), 0.1 * x.mean(axis=(0, 2, 3)),
                               atol=1e-12)


def test_batch_norm_eval_requires_stats():
    st_ = N.BatchNormState(torch.ones(2), torch.zeros(2), training=False)
    with pytest.raises(StateError):
        N.batch_norm(torch.zeros(1, 2, 3, 3), st_)
    with pytest.raises(ShapeError):
        N.batch_norm(torch.zeros(1, 3, 3, 3), N.BatchNormState.fresh(2))
    with pytest.raises(ConfigError):
        N.BatchNormState(torch.ones(2), torch.zeros(2), eps=0.0)


def test_activations(rng):
    x = rng.standard_normal((2, 3, 4, 5)) * 5
    np.testing.assert_allclose(N.activation(t(x), "relu").numpy(), oracles.relu(x), atol=0)
    np.testing.assert_allclose(N.activation(t(x), "sigmoid").numpy(), oracles.sigmoid(x),
                               atol=1e-15)
    with pytest.raises(ConfigError):
        N.activation(t(x), "tanh")


@pytest.mark.parametrize("dtype", [torch.float32, torch.float64])
def test_sigmoid_is_strictly_inside_unit_interval(dtype):
    x = torch.tensor([-1e4, -800.0, -40.0, 0.0, 40.0, 800.0, 1e4], dtype=dtype)
    s = N.activation(x, "sigmoid")
    assert bool((s > 0).all()) and bool((s < 1).all())
    assert float(s[3]) == 0.5
    assert torch.all(s[1:] >= s[:-1])


@pytest.mark.parametrize("hw", [(7, 7), (8, 5), (1, 1), (224, 224)])
def test_max_pool(rng, hw):
    x = rng.standard_normal((1, 2) + hw)
    if hw == (224, 224):
        got = N.max_pool2d(t(x)).numpy()
        assert got.shape == (1, 2, 112, 112)
        return
    np.testing.assert_array_equal(N.max_pool2d(t(x)).numpy(), oracles.max_pool2d(x))


@pytest.mark.parametrize("axis", ["horizontal", "vertical"])
@pytest.mark.parametrize("mode", ["avg", "max"])
def test_directional_pool(rng, axis, mode):
    x = rng.standard_normal((2, 3, 5, 7))
    got = N.directional_pool(t(x), axis, mode).numpy()
    np.testing.assert_allclose(got, oracles.directional_pool(x, axis, mode), atol=1e-14)
    assert got.shape == ((2, 3, 5, 1) if axis == "horizontal" else (2, 3, 1, 7))
    with pytest.raises(ConfigError):
        N.directional_pool(t(x), "diagonal", mode)


@pytest.mark.parametrize("src,dst", [((4, 4), (8, 8)), ((3, 5), (7, 4)), ((7, 7), (14, 14)),
                                     ((1, 3), (2, 6))])
def test_bilinear_resize(rng, src, dst):
    x = rng.standard_normal((2, 2) + src)
    got = N.bilinear_resize(t(x), dst).numpy()
    np.testing.assert_allclose(got, oracles.bilinear_resize(x, *dst), atol=1e-12)


def test_bilinear_identity_and_corners(rng):
    x = t(rng.standard_normal((1, 1, 5, 6)))
    assert N.bilinear_resize(x, (5, 6)) is x
    up = N.bilinear_upsample(x, 2)
    assert up.shape == (1, 1, 10, 12)
    for i, j in [(0, 0), (0, -1), (-1, 0), (-1, -1)]:
        assert up[0, 0, i, j] == x[0, 0, i, j]
    with pytest.raises(ConfigError):
        N.bilinear_upsample(x, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 9), st.integers(1, 9), st.floats(-3, 3),
       st.integers(0, 2**31 - 1))
def test_directional_pool_bounds(c, h, w, shift, seed):
    x = torch.from_numpy(np.random.default_rng(seed).standard_normal((1, c, h, w))) + shift
    for axis in ("horizontal", "vertical"):
        avg = N.directional_pool(x, axis, "avg")
        mx = N.directional_pool(x, axis, "max")
        assert bool((avg <= mx + 1e-12).all())
        assert bool((mx <= x.max()).all()) and bool((avg >= x.min() - 1e-12).all())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(2, 12), st.integers(2, 12),
       st.integers(0, 2**31 - 1))
def test_bilinear_stays_in_range(h, w, ho, wo, seed):
    x = torch.from_numpy(np.random.default_rng(seed).uniform(-1, 1, (1, 1, h, w)))
    y = N.bilinear_resize(x, (ho, wo))
    assert float(y.max()) <= float(x.max()) + 1e-12
    assert float(y.min()) >= float(x.min()) - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.integers(1, 7), st.integers(1, 3), st.integers(0, 3))
def test_conv_output_size_formula(n, k, s, p):
    if n + 2 * p < k:
        return
    x = torch.zeros(1, 1, n, n)
    y = torch.nn.functional.conv2d(x, torch.zeros(1, 1, k, k), stride=s, padding=p)
    assert N.conv_output_size(n, k, s, p) == y.shape[2]
