import numpy as np
import pytest

from gsmnet import ops, suites
from gsmnet.gradcheck import grad_check, relative_error
from gsmnet.tensor import Tensor, make_result


def test_relative_error_floor():
    assert relative_error(np.float64(0.0), np.float64(0.0)) == 0.0
    assert relative_error(np.float64(1.0), np.float64(1.1)) == pytest.approx(0.1 / 1.1)
    assert relative_error(np.float64(1e-12), np.float64(0.0)) == pytest.approx(1e-4)


def test_correct_gradient_passes():
    x = np.random.default_rng(0).standard_normal((3, 4))
    r = grad_check(lambda x: ops.activation_map(x, "tanh"), [x], name="tanh")
    assert r.passed and r.max_rel_error < 1e-7
    assert str(r).startswith("PASS  tanh")


def wrong_square(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    return make_result(x.data ** 2, (x,), lambda g: (g * x.data,), "wrong_square")   # missing factor 2


def test_wrong_gradient_fails_with_location():
    r = grad_check(wrong_square, [np.array([1.0, 2.0])], name="sq")
    assert not r.passed
    assert r.location[0] == 0
    assert r.max_rel_error == pytest.approx(0.5)


def test_non_finite_forward_reported():
    r = grad_check(lambda x: ops.mul(x, np.inf), [np.ones(2)])
    assert not r.passed and "non-finite" in r.message


def test_max_checks_subsamples():
    calls = []

    def fn(x):
        calls.append(1)
        return ops.mul(x, 2.0)

    grad_check(fn, [np.zeros(100)], max_checks=5)
    assert len(calls) == 1 + 2 * 5


def test_fault_injection_is_caught():
    reports = suites.run_suite("primitives", instances=1, inject_fault=True)
    assert all(not r.passed for r in reports)


def test_unknown_scope():
    with pytest.raises(ValueError):
        suites.run_suite("everything")


def test_primitive_suite_passes_quickly():
    reports = suites.run_suite("primitives", seed=3, instances=3)
    assert all(r.passed for r in reports), [str(r) for r in reports if not r.passed]
