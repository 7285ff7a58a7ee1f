import numpy as np
import pytest

from votebox.geometry import Rect2D
from votebox.micronet.layers import (
    MLP,
    Conv1D,
    Conv2D,
    Dense,
    avg_pool2d,
    roi_align,
    roi_align_matrix,
)
from votebox.micronet.tensor import Tensor, gradient_check


def conv2d_reference(x, weight, bias, kernel, stride, pad):
    """Direct-loop cross-correlation oracle matching the im2col layout."""
    out_c = weight.shape[1]
    padded = np.pad(x, ((pad[0], pad[1]), (pad[0], pad[1]), (0, 0)))
    ph, pw = padded.shape[:2]
    out_h = (ph - kernel) // stride + 1
    out_w = (pw - kernel) // stride + 1
    out = np.zeros((out_h, out_w, out_c))
    for i in range(out_h):
        for j in range(out_w):
            window = padded[i * stride : i * stride + kernel, j * stride : j * stride + kernel]
            out[i, j] = window.reshape(-1) @ weight + bias
    return out


def test_dense_shapes_and_grad():
    rng = np.random.default_rng(0)
    layer = Dense(4, 3, rng)
    x = Tensor(rng.normal(size=(5, 4)))
    x.requires_grad = True
    out = layer(x)
    assert out.shape == (5, 3)
    np.testing.assert_allclose(
        out.data, x.data @ layer.weight.data + layer.bias.data
    )

    def build():
        h = layer(x)
        return (h * h).sum()

    params = [x] + layer.parameters()
    assert gradient_check(build, params, step=1e-6, rtol=1e-5) < 1e-5


def test_mlp_stacks_relu_between_layers():
    rng = np.random.default_rng(1)
    mlp = MLP([3, 8, 2], rng)
    x = Tensor(rng.normal(size=(7, 3)))
    out = mlp(x)
    assert out.shape == (7, 2)
    assert (out.data >= 0.0).all()  # final relu on by default
    assert len(mlp.parameters()) == 4

    plain = MLP([3, 8, 2], np.random.default_rng(1), final_relu=False)

    def build():
        return (plain(x) * plain(x)).sum()

    # keep off relu kinks: FD at 1e-6 against analytic
    assert gradient_check(build, plain.parameters(), step=1e-6, rtol=1e-4) < 1e-4


def test_conv2d_matches_loop_reference():
    rng = np.random.default_rng(2)
    for kernel, stride in ((3, 1), (3, 2), (1, 1), (4, 2)):
        layer = Conv2D(2, 3, kernel=kernel, stride=stride, rng=rng)
        x = rng.normal(size=(6, 6, 2))
        got = layer(Tensor(x)).data
        want = conv2d_reference(
            x, layer.weight.data, layer.bias.data, kernel, stride, layer.pad
        )
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv2d_same_padding_preserves_size():
    layer = Conv2D(1, 1, kernel=3, stride=1, padding="same")
    out = layer(Tensor(np.ones((5, 7, 1))))
    assert out.shape == (5, 7, 1)
    valid = Conv2D(1, 1, kernel=3, stride=1, padding="valid")
    assert valid(Tensor(np.ones((5, 7, 1)))).shape == (3, 5, 1)
    with pytest.raises(ValueError):
        Conv2D(1, 1, padding="reflect")


def test_conv2d_gradients():
    rng = np.random.default_rng(3)
    layer = Conv2D(2, 2, kernel=3, stride=2, rng=rng)
    x = Tensor(rng.normal(size=(5, 5, 2)))
    x.requires_grad = True

    def build():
        out = layer(x)
        return (out * out).sum()

    params = [x] + layer.parameters()
    assert gradient_check(build, params, step=1e-6, rtol=1e-4) < 1e-4


def test_conv1d_same_length_and_grad():
    rng = np.random.default_rng(4)
    layer = Conv1D(3, 2, kernel=4, rng=rng)
    x = Tensor(rng.normal(size=(6, 3)))
    x.requires_grad = True
    assert layer(x).shape == (6, 2)

    # sliding-window oracle with asymmetric same padding
    padded = np.pad(x.data, ((layer.pad[0], layer.pad[1]), (0, 0)))
    want = np.zeros((6, 2))
    for t in range(6):
        want[t] = padded[t : t + 4].reshape(-1) @ layer.weight.data + layer.bias.data
    np.testing.assert_allclose(layer(x).data, want, atol=1e-12)

    def build():
        out = layer(x)
        return (out * out).sum()

    assert gradient_check(build, [x] + layer.parameters(), step=1e-6, rtol=1e-4) < 1e-4


def test_avg_pool2d_hand_case():
    x = Tensor(np.arange(16.0).reshape(4, 4, 1))
    out = avg_pool2d(x, 2)
    want = np.array([[2.5, 4.5], [10.5, 12.5]])[:, :, None]
    np.testing.assert_allclose(out.data, want)
    with pytest.raises(ValueError):
        avg_pool2d(Tensor(np.zeros((4, 6, 1))), 4)


def test_roi_align_linear_ramp_oracle():
    # features linear in the row coordinate sample back exactly:
    # bin i of a rect starting at r0 averages to r0 + (i + 0.5) * bin_h
    h, w = 12, 12
    ramp_r = np.zeros((h, w, 2))
    ramp_r[..., 0] = np.arange(h)[:, None] + 0.5
    ramp_r[..., 1] = np.arange(w)[None, :] + 0.5
    rect = Rect2D(center=(6.0, 5.0), size=(4.0, 6.0))
    out = roi_align(ramp_r, rect, out_size=4)
    r0, c0 = 4.0, 2.0
    for i in range(4):
        np.testing.assert_allclose(out[i, :, 0], r0 + (i + 0.5) * 1.0, atol=1e-12)
        for j in range(4):
            np.testing.assert_allclose(out[i, j, 1], c0 + (j + 0.5) * 1.5, atol=1e-12)


def test_roi_align_matrix_rows_are_convex():
    matrix = roi_align_matrix(8, 8, Rect2D((4.0, 4.0), (6.0, 6.0)), 4)
    np.testing.assert_allclose(matrix.sum(axis=1), np.ones(16), atol=1e-12)
    assert (matrix >= 0.0).all()


def test_roi_align_constant_feature_is_exact_everywhere():
    # clamping at borders cannot change a constant field
    feats = np.full((6, 6, 1), 3.25)
    rect = Rect2D((0.0, 0.0), (20.0, 20.0))  # wildly out of bounds
    out = roi_align(feats, rect, out_size=3)
    np.testing.assert_allclose(out, 3.25, atol=1e-12)


def test_roi_align_gradients_and_validation():
    rng = np.random.default_rng(5)
    feats = Tensor(rng.normal(size=(6, 6, 2)))
    feats.requires_grad = True
    rect = Rect2D((3.0, 3.0), (4.0, 4.0))

    def build():
        out = roi_align(feats, rect, out_size=3)
        return (out * out).sum()

    assert gradient_check(build, [feats], step=1e-6, rtol=1e-5) < 1e-5
    with pytest.raises(ValueError):
        roi_align(np.zeros((6, 6)), rect)
    with pytest.raises(ValueError):
        roi_align(np.zeros((6, 6, 1)), Rect2D((3.0, 3.0), (4.0, 4.0), angle=0.5))
