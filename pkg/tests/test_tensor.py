import numpy as np
import pytest

from gsmnet import ops
from gsmnet.tensor import ShapeError, Tensor, grad_enabled, no_grad


def test_default_dtype_is_float32_and_float64_is_kept():
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64
    assert Tensor([1.0], dtype=np.float64).dtype == np.float64


def test_zero_extent_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 0)))


def test_scalar_chain_rule():
    a = Tensor(np.array(3.0), requires_grad=True)
    b = Tensor(np.array(4.0), requires_grad=True)
    c = a * b + a            # dc/da = b + 1, dc/db = a
    c.backward()
    assert a.grad == 5.0 and b.grad == 3.0


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    y = x * x
    z = y + y
    z.backward(np.ones(2))
    np.testing.assert_array_equal(x.grad, 4 * x.data)


def test_backward_twice_accumulates_on_leaves():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (x * 3.0).backward(np.ones(1))
    (x * 3.0).backward(np.ones(1))
    assert x.grad[0] == 6.0
    x.zero_grad()
    assert x.grad is None


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        assert not grad_enabled()
        y = x * 2.0
    assert grad_enabled()
    assert not y.requires_grad and y._parents == ()


def test_leaves_without_requires_grad_get_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    c = Tensor(np.full(2, 5.0))
    (x * c).backward(np.ones(2))
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [5.0, 5.0])


def test_backward_shape_checks():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    with pytest.raises(ShapeError):
        y.backward()
    with pytest.raises(ShapeError):
        y.backward(np.ones(4))


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = ops.add(y, 0.0)
    y.backward(np.ones(1))
    assert x.grad[0] == 1.0


def test_negation_and_subtraction():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (-(a - 3.0)).backward(np.ones(2))
    np.testing.assert_array_equal(a.grad, [-1.0, -1.0])
