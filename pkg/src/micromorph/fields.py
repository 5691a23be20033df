"""Closed-form fields with exact first and second derivatives.

A scalar field is a sum of separable terms ``c * f1(x) * f2(y) * f3(z)``
where each factor is ``sin(k pi t)``, ``cos(k pi t)`` or ``t**p``. Vector and
tensor fields are arrays of scalar fields. All evaluations are vectorised
over points of shape (n, 3).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Factor = tuple  # ("sin", k) | ("cos", k) | ("pow", p)


def _factor(f: Factor, t: np.ndarray, d: int) -> np.ndarray:
    kind, k = f
    if kind == "pow":
        p = int(k)
        if d > p:
            return np.zeros_like(t)
        coef = 1.0
        for i in range(d):
            coef *= p - i
        return coef * t ** (p - d)
    w = k * np.pi
    phase = {"sin": 0, "cos": 1}[kind] + d
    base = (np.sin, np.cos, lambda s: -np.sin(s), lambda s: -np.cos(s))[phase % 4]
    return w ** d * base(w * t)


@dataclass(frozen=True)
class ScalarField:
    terms: tuple  # of (coef, (fx, fy, fz))

    def _eval(self, x: np.ndarray, orders: tuple[int, int, int]) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros(len(x))
        for coef, factors in self.terms:
            val = coef
            for axis, (f, d) in enumerate(zip(factors, orders)):
                val = val * _factor(f, x[:, axis], d)
            out += val
        return out

    def value(self, x: np.ndarray) -> np.ndarray:
        return self._eval(x, (0, 0, 0))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return np.stack([self._eval(x, tuple(int(i == a) for i in range(3))) for a in range(3)], axis=-1)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        cols = []
        for a in range(3):
            row = []
            for b in range(3):
                order = [0, 0, 0]
                order[a] += 1
                order[b] += 1
                row.append(self._eval(x, tuple(order)))
            cols.append(np.stack(row, axis=-1))
        return np.stack(cols, axis=-2)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(tuple((coef * c, f) for coef, f in self.terms))

    __rmul__ = __mul__

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.terms + other.terms)


ZERO = ScalarField(())


def sine_product(k: int = 1) -> ScalarField:
    """sin(k pi x) sin(k pi y) sin(k pi z); vanishes on the cube boundary."""
    return ScalarField(((1.0, (("sin", k), ("sin", k), ("sin", k))),))


def trig(coef: float, fx: Factor, fy: Factor, fz: Factor) -> ScalarField:
    return ScalarField(((float(coef), (fx, fy, fz)),))


def polynomial(coeffs: dict) -> ScalarField:
    """Polynomial from ``{(a, b, c): coef}`` meaning coef * x^a y^b z^c."""
    terms = []
    for (a, b, c), coef in sorted(coeffs.items()):
        if a + b + c > 4:
            raise ValueError("polynomial fields are limited to total degree 4")
        terms.append((float(coef), (("pow", a), ("pow", b), ("pow", c))))
    return ScalarField(tuple(terms))


def constant(c: float) -> ScalarField:
    return polynomial({(0, 0, 0): c})


class AnalyticField:
    """Scalar, 3-vector or 3x3 tensor field of ScalarField components."""

    def __init__(self, components):
        comps = np.empty(np.shape(np.asarray(components, dtype=object)), dtype=object)
        flat = np.asarray(components, dtype=object).ravel()
        for i, c in enumerate(flat):
            comps.flat[i] = c
        self.components = comps
        self.shape = comps.shape

    def _stack(self, fn: str, x: np.ndarray, tail: tuple) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty((len(x),) + self.shape + tail)
        for idx in np.ndindex(self.shape):
            out[(slice(None),) + idx] = getattr(self.components[idx], fn)(x)
        return out

    def value(self, x: np.ndarray) -> np.ndarray:
        return self._stack("value", x, ())

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Partial derivatives, shape (n, *shape, 3)."""
        return self._stack("grad", x, (3,))

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return self._stack("hessian", x, (3, 3))

    __call__ = value

    @classmethod
    def scaled(cls, g: ScalarField, K) -> "AnalyticField":
        """Field ``g(x) * K`` for a constant array K."""
        K = np.asarray(K, dtype=float)
        return cls(np.vectorize(lambda k: g * float(k), otypes=[object])(K))

    @classmethod
    def zero(cls, shape: tuple) -> "AnalyticField":
        comps = np.empty(shape, dtype=object)
        comps.fill(ZERO)
        return cls(comps)

    @classmethod
    def linear(cls, A, b=None) -> "AnalyticField":
        """Affine vector field A x + b."""
        A = np.asarray(A, dtype=float)
        b = np.zeros(3) if b is None else np.asarray(b, dtype=float)
        comps = []
        for i in range(3):
            coeffs = {(0, 0, 0): b[i], (1, 0, 0): A[i, 0], (0, 1, 0): A[i, 1], (0, 0, 1): A[i, 2]}
            comps.append(polynomial(coeffs))
        return cls(comps)


class CallableField:
    """Field known only through point values (e.g. manufactured data)."""

    def __init__(self, shape: tuple, fn: Callable[[np.ndarray], np.ndarray]):
        self.shape = shape
        self._fn = fn

    def value(self, x: np.ndarray) -> np.ndarray:
        return self._fn(np.atleast_2d(x))

    __call__ = value


# ---- differential operators on evaluated derivatives

LEVI_CIVITA = np.zeros((3, 3, 3))
LEVI_CIVITA[0, 1, 2] = LEVI_CIVITA[1, 2, 0] = LEVI_CIVITA[2, 0, 1] = 1.0
LEVI_CIVITA[0, 2, 1] = LEVI_CIVITA[2, 1, 0] = LEVI_CIVITA[1, 0, 2] = -1.0


def curl_rows(grad: np.ndarray) -> np.ndarray:
    """Row-wise curl from ``grad[..., i, j, k] = d_k P_ij``."""
    return np.einsum("lkj,...ijk->...il", LEVI_CIVITA, grad)


def curl_rows_grad(hess: np.ndarray) -> np.ndarray:
    """``d_n (Curl P)_il`` from ``hess[..., i, j, k, n] = d_k d_n P_ij``; last axis n."""
    return np.einsum("lkj,...ijkn->...iln", LEVI_CIVITA, hess)


def div_rows(grad: np.ndarray) -> np.ndarray:
    return np.einsum("...ijj->...i", grad)
