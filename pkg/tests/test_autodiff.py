"""Tests for the reverse-mode autodiff core."""

import threading

import numpy as np
import pytest

from mfhca.core.autodiff import DEFAULT_DTYPE, Graph, Parameter, Tensor, no_grad
from mfhca.core.errors import GraphError, ShapeError


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == DEFAULT_DTYPE == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64


def test_add_mul_gradients():
    a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    b = Tensor(np.array([4.0, 5.0, 6.0]), requires_grad=True)
    ((a * b) + a).sum().backward()
    np.testing.assert_allclose(a.grad, [5.0, 6.0, 7.0])
    np.testing.assert_allclose(b.grad, [1.0, 2.0, 3.0])


def test_broadcast_gradient_is_reduced_to_parent_shape():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a * b).sum().backward()
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(2.0), requires_grad=True)
    y = x * x
    (y + y).backward()
    assert x.grad == pytest.approx(8.0)


def test_getitem_gradient_is_sparse_and_accumulates():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    (x[0, 1:] * 2.0 + x[:, 2]).sum().backward()
    np.testing.assert_allclose(x.grad, [[0.0, 2.0, 3.0], [0.0, 0.0, 1.0]])


def test_fancy_index_with_repeats():
    x = Tensor(np.arange(4.0), requires_grad=True)
    x[np.array([1, 1, 3])].sum().backward()
    np.testing.assert_allclose(x.grad, [0.0, 2.0, 0.0, 1.0])


def test_mean_reshape_transpose():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.T.reshape(6).mean().backward()
    np.testing.assert_allclose(x.grad, np.full((2, 3), 1 / 6))


def test_elementwise_functions():
    x = Tensor(np.array([0.5, 1.5]), requires_grad=True)
    (x.exp() + x.log() + x.tanh() + x**2).sum().backward()
    v = np.array([0.5, 1.5])
    expected = np.exp(v) + 1 / v + (1 - np.tanh(v) ** 2) + 2 * v
    np.testing.assert_allclose(x.grad, expected)


def test_division_gradients():
    a = Tensor(np.array([2.0]), requires_grad=True)
    b = Tensor(np.array([4.0]), requires_grad=True)
    (a / b).sum().backward()
    assert a.grad[0] == pytest.approx(0.25)
    assert b.grad[0] == pytest.approx(-2.0 / 16.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError, match="scalar"):
        (x * 2.0).backward()


def test_second_backward_on_same_graph_fails():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * 2.0).sum()
    loss.backward()
    with pytest.raises(GraphError, match="twice"):
        loss.backward()


def test_loss_built_on_backpropagated_subgraph_fails():
    x = Tensor(np.ones(2), requires_grad=True)
    y = x * 3.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [3.0, 3.0])
    with pytest.raises(GraphError, match="already backpropagated"):
        (y * 2.0).sum().backward()


def test_backward_without_grad_inputs_fails():
    with pytest.raises(GraphError):
        Tensor(np.ones(2)).sum().backward()


def test_fresh_forward_accumulates_into_leaf():
    p = Parameter(np.ones(2))
    for _ in range(2):
        (p * 3.0).sum().backward()
    np.testing.assert_allclose(p.grad, [6.0, 6.0])
    p.zero_grad()
    assert p.grad is None


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y.is_leaf


def test_no_grad_is_thread_local():
    x = Tensor(np.ones(2), requires_grad=True)
    seen = []

    def worker():
        seen.append((x * 2.0).requires_grad)

    with no_grad():
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert seen == [True]


def test_item_requires_single_element():
    assert Tensor([3.0]).item() == 3.0
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_graph_order_puts_parents_first():
    a = Tensor(np.ones(2), requires_grad=True)
    b = a * 2.0
    c = (b + a).sum()
    order = Graph(c).nodes
    assert order.index(a) < order.index(b) < order.index(c)


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    y.backward()
    assert x.grad == pytest.approx(1.0)
