import numpy as np
import pytest

from micromorph.fields import (AnalyticField, constant, curl_rows, div_rows, polynomial, sine_product, trig)

STEP = 1e-5


def _fields():
    s = sine_product(1)
    mixed = trig(2.0, ("cos", 1), ("sin", 2), ("cos", 1)) + polynomial({(2, 1, 1): 1.5, (0, 3, 0): -1.0})
    return {
        "scalar": AnalyticField([s + mixed]),
        "vector": AnalyticField([s, mixed, polynomial({(4, 0, 0): 1.0, (1, 1, 0): 2.0})]),
        "tensor": AnalyticField.scaled(s, np.arange(9.0).reshape(3, 3) - 4.0),
    }


@pytest.mark.parametrize("name", ["scalar", "vector", "tensor"])
def test_finite_difference_derivatives(name):
    f = _fields()[name]
    x = np.random.default_rng(0).uniform(0.05, 0.95, (20, 3))
    g = f.grad(x)
    H = f.hessian(x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = STEP
        fd = (f.value(x + e) - f.value(x - e)) / (2 * STEP)
        np.testing.assert_allclose(g[..., k], fd, atol=1e-8)
        fd2 = (f.grad(x + e) - f.grad(x - e)) / (2 * STEP)
        np.testing.assert_allclose(H[..., k, :], fd2, atol=1e-4)


def test_polynomial_degree_limit():
    with pytest.raises(ValueError):
        polynomial({(5, 0, 0): 1.0})


def test_linear_and_constant():
    A = np.array([[1.0, 2, 3], [0, 1, 0], [-1, 0, 2]])
    f = AnalyticField.linear(A, [1.0, 0.0, -1.0])
    x = np.random.default_rng(1).random((4, 3))
    np.testing.assert_allclose(f.value(x), x @ A.T + [1.0, 0.0, -1.0])
    np.testing.assert_allclose(f.grad(x), np.broadcast_to(A, (4, 3, 3)))
    assert np.all(f.hessian(x) == 0)
    assert np.all(constant(2.0).value(x) == 2.0)


def test_sine_product_boundary():
    s = sine_product(1)
    pts = np.array([[0.0, 0.3, 0.7], [1.0, 0.2, 0.2], [0.4, 1.0, 0.5], [0.5, 0.5, 0.0]])
    assert np.abs(s.value(pts)).max() <= 1e-15


def test_curl_of_gradient_vanishes():
    taus = AnalyticField([[sine_product(1)], [polynomial({(2, 1, 1): 1.0})], [trig(1.0, ("cos", 1), ("sin", 1), ("pow", 2))]])
    x = np.random.default_rng(2).random((10, 3))
    grad_rows = taus.hessian(x)[:, :, 0]  # d_j d_k tau_i, a gradient field per row
    np.testing.assert_allclose(curl_rows(grad_rows), 0.0, atol=1e-12)


def test_curl_and_div_of_linear_rows():
    # first row (y, z, x): curl = (-1, -1, -1), div = 0
    grad = np.zeros((3, 3, 3, 3))
    grad[:, 0, 0, 1] = grad[:, 0, 1, 2] = grad[:, 0, 2, 0] = 1.0
    np.testing.assert_allclose(curl_rows(grad)[:, 0], -1.0)
    np.testing.assert_allclose(div_rows(grad)[:, 0], 0.0)
