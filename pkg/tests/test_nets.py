"""Tests for model specs, construction and forward shape contracts."""

import numpy as np
import pytest

from dipscope.autodiff import ShapeError, Tensor, sse_loss
from dipscope.nets import FAMILIES, Model, ModelSpec, build_model, coordinate_grid


def conv1d_param_count(depth, width, k):
    # hand count: first conv 1->w, middles w->w, last w->1, plus biases
    first = width * 1 * k + width
    mid = (depth - 2) * (width * width * k + width)
    last = 1 * width * k + 1
    return first + mid + last


def linear_param_count(depth, width, n):
    return (n * width + width) + (depth - 2) * (width * width + width) + (width * n + n)


def relunet_param_count(depth, width, cdim):
    return (cdim * width + width) + (depth - 2) * (width * width + width) + (width + 1)


# ---------------------------------------------------------------------------
# spec validation


def test_spec_defaults_for_conv():
    s = ModelSpec("dip_conv_1d", depth=4, width=8)
    assert s.kernel_size == 3
    assert s.upsample_mode == "nearest"
    assert s.upsample_stride == 2


def test_spec_rejections():
    with pytest.raises(ValueError):
        ModelSpec("resnet", 4, 8)
    with pytest.raises(ValueError):
        ModelSpec("dip_conv_1d", 1, 8)
    with pytest.raises(ValueError):
        ModelSpec("dip_conv_1d", 4, 0)
    with pytest.raises(ValueError):
        ModelSpec("dip_conv_1d", 4, 8, kernel_size=4)
    with pytest.raises(ValueError):
        ModelSpec("relunet", 4, 8, signal_shape=(16,), upsample_mode="nearest")
    with pytest.raises(ValueError):
        ModelSpec("dip_linear_1d", 4, 8)  # needs signal_shape
    with pytest.raises(ValueError):
        ModelSpec("dip_linear_2d", 4, 8, signal_shape=(16,))
    with pytest.raises(ValueError):
        ModelSpec("dip_conv_1d", 4, 8, activation="tanh")


def test_spec_activation_defaults_per_family():
    assert ModelSpec("dip_conv_1d", 4, 8).activation == "leaky_relu"
    assert ModelSpec("dip_conv_2d", 4, 8).activation == "leaky_relu"
    assert ModelSpec("relunet", 4, 8, signal_shape=(16,)).activation == "relu"
    explicit = ModelSpec("relunet", 4, 8, signal_shape=(16,), activation="leaky_relu")
    assert explicit.activation == "leaky_relu"


def test_spec_json_round_trip():
    s = ModelSpec("dip_conv_2d", 6, 16, kernel_size=5, upsample_mode="bilinear",
                  upsample_stride=2, signal_shape=(32, 32), init_seed=7)
    s2 = ModelSpec.from_dict(s.to_dict())
    assert s2 == s
    r = ModelSpec("relunet", 3, 8, signal_shape=(10, 12))
    assert ModelSpec.from_dict(r.to_dict()) == r


# ---------------------------------------------------------------------------
# construction


def test_param_count_conv1d_closed_form():
    s = ModelSpec("dip_conv_1d", depth=10, width=256, kernel_size=3)
    m = build_model(s)
    assert m.param_count() == conv1d_param_count(10, 256, 3)
    assert m.param_count() == 1576705


def test_param_count_conv2d():
    s = ModelSpec("dip_conv_2d", depth=4, width=8, kernel_size=3)
    m = build_model(s)
    expected = (8 * 9 + 8) + 2 * (8 * 8 * 9 + 8) + (8 * 9 + 1)
    assert m.param_count() == expected


def test_param_count_linear_quadratic_in_width():
    n = 32
    for w in (4, 8, 16):
        s = ModelSpec("dip_linear_1d", depth=4, width=w, signal_shape=(n,))
        assert build_model(s).param_count() == linear_param_count(4, w, n)


def test_param_count_linear_linear_in_depth():
    n, w = 16, 8
    counts = [build_model(ModelSpec("dip_linear_1d", d, w, signal_shape=(n,))).param_count()
              for d in (2, 3, 4, 5)]
    diffs = np.diff(counts)
    assert len(set(diffs.tolist())) == 1  # constant increment per layer


def test_relunet_first_layer_matches_coord_dim():
    m1 = build_model(ModelSpec("relunet", 4, 16, signal_shape=(64,)))
    assert m1.parameters[0].shape == (16, 1)
    m2 = build_model(ModelSpec("relunet", 4, 16, signal_shape=(8, 8)))
    assert m2.parameters[0].shape == (16, 2)
    assert m2.param_count() == relunet_param_count(4, 16, 2)


def test_build_deterministic_per_seed():
    s = ModelSpec("dip_conv_1d", 4, 8, init_seed=11)
    a, b = build_model(s), build_model(s)
    for pa, pb in zip(a.parameters, b.parameters):
        np.testing.assert_array_equal(pa.data, pb.data)
    c = build_model(ModelSpec("dip_conv_1d", 4, 8, init_seed=12))
    assert any(not np.array_equal(pa.data, pc.data)
               for pa, pc in zip(a.parameters, c.parameters))


def test_init_bound_respected():
    s = ModelSpec("dip_linear_1d", 3, 8, signal_shape=(16,), init_seed=0)
    m = build_model(s)
    w0 = m.parameters[0]  # fan_in 16
    assert np.max(np.abs(w0.data)) <= np.sqrt(1 / 16)


def test_mid_bottleneck_recorded_for_odd_depth():
    assert build_model(ModelSpec("dip_conv_1d", 5, 4)).mid_bottleneck
    assert not build_model(ModelSpec("dip_conv_1d", 4, 4)).mid_bottleneck


def test_parameter_names_cover_all():
    m = build_model(ModelSpec("dip_conv_1d", 4, 4))
    assert len(m.names) == len(m.parameters) == 8  # 4 convs x (w, b)


# ---------------------------------------------------------------------------
# forward shape contracts


def test_conv1d_round_trip_shape():
    s = ModelSpec("dip_conv_1d", 4, 6)
    m = build_model(s)
    z = np.random.default_rng(0).normal(size=(1, 32))
    out = m.forward(Tensor(z))
    assert out.shape == (32,)


def test_conv2d_round_trip_shape():
    s = ModelSpec("dip_conv_2d", 4, 6, signal_shape=(16, 16))
    m = build_model(s)
    z = np.random.default_rng(1).normal(size=(1, 16, 16))
    assert m.forward(Tensor(z)).shape == (16, 16)


def test_conv_round_trip_shapes_random_specs():
    rng = np.random.default_rng(2)
    for _ in range(8):
        depth = int(rng.integers(2, 7))
        stride = int(rng.choice([1, 2]))
        width = int(rng.integers(2, 6))
        k = int(rng.choice([1, 3, 5]))
        stages = depth // 2
        n = stride ** stages * int(rng.integers(2, 5))
        s = ModelSpec("dip_conv_1d", depth, width, kernel_size=k,
                      upsample_stride=stride)
        out = build_model(s).forward(np.zeros((1, n)))
        assert out.shape == (n,), (depth, stride, n)


def test_conv_indivisible_rejected():
    s = ModelSpec("dip_conv_1d", 4, 4, upsample_stride=2)  # needs n % 4 == 0
    m = build_model(s)
    with pytest.raises(ShapeError, match="divisible"):
        m.forward(np.zeros((1, 30)))


def test_linear_forward_shapes():
    s = ModelSpec("dip_linear_1d", 3, 8, signal_shape=(20,))
    out = build_model(s).forward(np.zeros(20))
    assert out.shape == (20,)
    s2 = ModelSpec("dip_linear_2d", 3, 8, signal_shape=(6, 5))
    out2 = build_model(s2).forward(np.zeros((6, 5)))
    assert out2.shape == (6, 5)


def test_relunet_forward_shapes():
    m = build_model(ModelSpec("relunet", 3, 8, signal_shape=(24,)))
    assert m.forward().shape == (24,)
    m2 = build_model(ModelSpec("relunet", 3, 8, signal_shape=(6, 7)))
    assert m2.forward().shape == (6, 7)


def test_forward_deterministic():
    s = ModelSpec("dip_conv_2d", 4, 4, signal_shape=(8, 8), init_seed=5)
    z = np.random.default_rng(3).normal(size=(1, 8, 8))
    a = build_model(s).forward(z).data
    b = build_model(s).forward(z).data
    np.testing.assert_array_equal(a, b)


def test_model_gradients_flow_to_all_parameters():
    s = ModelSpec("dip_conv_1d", 4, 4, init_seed=1)
    m = build_model(s)
    z = np.random.default_rng(4).normal(size=(1, 16))
    target = Tensor(np.zeros(16))
    loss = sse_loss(m.forward(z), target)
    loss.backward()
    for name, p in zip(m.names, m.parameters):
        assert p.grad is not None, name
        assert np.any(p.grad != 0), name


def test_coordinate_grid_values():
    g = coordinate_grid((5,))
    np.testing.assert_allclose(g[:, 0], [-1, -0.5, 0, 0.5, 1])
    g2 = coordinate_grid((3, 2))
    assert g2.shape == (6, 2)
    np.testing.assert_allclose(g2[0], [-1, -1])
    np.testing.assert_allclose(g2[-1], [1, 1])
    # row-major: second row is same y, next x
    np.testing.assert_allclose(g2[1], [-1, 1])
    with pytest.raises(ValueError):
        coordinate_grid((1,))


def test_zero_grad_clears_all():
    m = build_model(ModelSpec("dip_linear_1d", 3, 4, signal_shape=(8,)))
    loss = sse_loss(m.forward(np.zeros(8)), Tensor(np.ones(8)))
    loss.backward()
    m.zero_grad()
    assert all(p.grad is None for p in m.parameters)
