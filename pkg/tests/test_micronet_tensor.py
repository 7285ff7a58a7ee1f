import numpy as np
import pytest

from votebox.micronet.tensor import Tensor, concat, gradient_check


def _leaf(data):
    t = Tensor(np.asarray(data, dtype=np.float64))
    t.requires_grad = True
    return t


def test_forward_values_match_numpy():
    a = Tensor(np.array([[1.0, -2.0], [3.0, 4.0]]))
    b = Tensor(np.array([[0.5, 2.0], [1.0, -1.0]]))
    np.testing.assert_allclose((a + b).data, a.data + b.data)
    np.testing.assert_allclose((a * b).data, a.data * b.data)
    np.testing.assert_allclose((a - b).data, a.data - b.data)
    np.testing.assert_allclose((a / b).data, a.data / b.data)
    np.testing.assert_allclose((a @ b).data, a.data @ b.data)
    np.testing.assert_allclose(a.relu().data, np.maximum(a.data, 0.0))
    np.testing.assert_allclose(a.exp().data, np.exp(a.data))
    np.testing.assert_allclose(a.sigmoid().data, 1.0 / (1.0 + np.exp(-a.data)))
    np.testing.assert_allclose(a.sum().data, a.data.sum())
    np.testing.assert_allclose(a.mean(axis=0).data, a.data.mean(axis=0))
    np.testing.assert_allclose(a.T.data, a.data.T)


def test_softmax_rows_sum_to_one():
    x = Tensor(np.array([[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0], [100.0, 100.0, 100.0]]))
    s = x.softmax(axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(3), atol=1e-15)
    assert (s.data > 0.0).all()
    # large inputs stay finite (max-shifted exponentials)
    big = Tensor(np.array([[1000.0, 1001.0]]))
    assert np.isfinite(big.softmax(axis=-1).data).all()


def test_backward_simple_chain():
    x = _leaf([2.0, -3.0])
    y = (x * x).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data)


def test_backward_broadcast_unbroadcasts():
    w = _leaf([[1.0, 2.0], [3.0, 4.0]])
    b = _leaf([10.0, 20.0])
    out = (w + b).sum()
    out.backward()
    np.testing.assert_allclose(w.grad, np.ones((2, 2)))
    np.testing.assert_allclose(b.grad, np.array([2.0, 2.0]))


def test_shared_node_accumulates_gradient():
    x = _leaf([1.5])
    y = x * x + x * 3.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2.0 * 1.5 + 3.0)


def test_gradient_check_composite_graph():
    rng = np.random.default_rng(0)
    a = _leaf(rng.normal(size=(4, 3)))
    b = _leaf(rng.normal(size=(3, 5)))
    c = _leaf(rng.normal(size=(5,)))

    def build():
        h = (a @ b + c).relu()
        s = h.softmax(axis=-1)
        return (s * s).sum() + (h.sigmoid().mean())

    worst = gradient_check(build, [a, b, c], step=1e-6, rtol=1e-6)
    assert worst < 1e-6


def test_gradient_check_catches_wrong_gradient():
    x = _leaf([1.0, 2.0])

    def build():
        # forward x^2 but a deliberately wrong backward of 3x
        out = Tensor._from_op(
            x.data**2, (x,), lambda grad: [(x, 3.0 * x.data * grad)]
        )
        return out.sum()

    with pytest.raises(AssertionError):
        gradient_check(build, [x], step=1e-6, rtol=1e-4)


def test_max_and_getitem_and_gather_grads():
    rng = np.random.default_rng(1)
    x = _leaf(rng.normal(size=(5, 4)))

    def build():
        picked = x.gather_rows(np.array([0, 2, 2, 4]))
        return picked.max(axis=0).sum() + x[1:3, :2].sum()

    assert gradient_check(build, [x], step=1e-6, rtol=1e-5) < 1e-5


def test_pad_reshape_transpose_grads():
    rng = np.random.default_rng(2)
    x = _leaf(rng.normal(size=(3, 4)))

    def build():
        p = x.pad2d((1, 2), (0, 1))
        return (p.reshape(6, 5).transpose() * 0.5).sum() + p.clip(-0.4, 0.4).sum()

    assert gradient_check(build, [x], step=1e-6, rtol=1e-5) < 1e-5


def test_concat_forward_and_grad():
    a = _leaf(np.arange(6.0).reshape(2, 3))
    b = _leaf(np.arange(6.0, 12.0).reshape(2, 3))
    out = concat([a, b], axis=1)
    np.testing.assert_allclose(out.data, np.concatenate([a.data, b.data], axis=1))
    (out * out).sum().backward()
    np.testing.assert_allclose(a.grad, 2.0 * a.data)
    np.testing.assert_allclose(b.grad, 2.0 * b.data)


def test_dropout_deterministic_and_default_off():
    x = Tensor(np.ones((20, 20)))
    kept = x.dropout(0.5, seed=3, enabled=False)
    np.testing.assert_array_equal(kept.data, x.data)
    a = x.dropout(0.5, seed=3, enabled=True)
    b = x.dropout(0.5, seed=3, enabled=True)
    np.testing.assert_array_equal(a.data, b.data)
    c = x.dropout(0.5, seed=4, enabled=True)
    assert (a.data != c.data).any()
    # inverted scaling keeps the expectation: surviving entries are 1/(1-p)
    survivors = a.data[a.data != 0.0]
    np.testing.assert_allclose(survivors, 2.0)


def test_backward_requires_scalar_root():
    x = _leaf([[1.0, 2.0]])
    with pytest.raises(ValueError):
        x.backward()


def test_item_and_shape_helpers():
    t = Tensor(np.array([[7.0]]))
    assert t.item() == 7.0
    assert t.shape == (1, 1) and t.size == 1
    with pytest.raises(ValueError):
        Tensor(np.array([1.0, 2.0])).item()
