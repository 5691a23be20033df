"""Constitutive tensors in Mandel form and their positivity checks.

Symmetric 3x3 tensors are stored as Mandel 6-vectors
``(s11, s22, s33, r*s23, r*s13, r*s12)`` with ``r = sqrt(2)``, so the
Frobenius norm is the Euclidean norm and fourth-order tensors on Sym(3)
become symmetric 6x6 matrices. General 3x3 tensors use row-major 9-vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

SQRT2 = np.sqrt(2.0)
_MANDEL_IJ = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
_MANDEL_W = np.array([1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2])

# T[a, i, j]: Mandel component a of sym(X) is sum_ij T[a, i, j] X[i, j]
MANDEL_SYM = np.zeros((6, 3, 3))
for _a, (_i, _j) in enumerate(_MANDEL_IJ):
    if _i == _j:
        MANDEL_SYM[_a, _i, _i] = 1.0
    else:
        MANDEL_SYM[_a, _i, _j] = MANDEL_SYM[_a, _j, _i] = 1.0 / SQRT2


class MaterialError(ValueError):
    """A coefficient tensor violates Assumption-A type conditions."""


def mandel(s: np.ndarray) -> np.ndarray:
    """Mandel vector of sym(s) for (..., 3, 3) input."""
    return np.einsum("aij,...ij->...a", MANDEL_SYM, s)


def from_mandel(v: np.ndarray) -> np.ndarray:
    return np.einsum("aij,...a->...ij", MANDEL_SYM, v)


def sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.swapaxes(x, -1, -2))


def skew(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x - np.swapaxes(x, -1, -2))


def isotropic(lam: float, mu: float) -> np.ndarray:
    """Mandel matrix of sigma -> 2 mu sigma + lam tr(sigma) I."""
    if mu <= 0 or 3 * lam + 2 * mu <= 0:
        raise MaterialError(f"isotropic tensor not positive definite: mu={mu}, 3*lambda+2*mu={3 * lam + 2 * mu}")
    trace = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    return 2.0 * mu * np.eye(6) + lam * np.outer(trace, trace)


def lc_scalar(value: float) -> np.ndarray:
    """Uni-constant curvature tensor: eta -> value * eta."""
    return float(value) * np.eye(9)


def lc_block_diagonal(blocks) -> np.ndarray:
    """9x9 action of (L eta)_row_i = L_i eta_row_i."""
    blocks = [np.asarray(b, dtype=float) for b in blocks]
    if len(blocks) != 3 or any(b.shape != (3, 3) for b in blocks):
        raise MaterialError("block-diagonal L_c needs three 3x3 blocks")
    out = np.zeros((9, 9))
    for i, b in enumerate(blocks):
        out[3 * i:3 * i + 3, 3 * i:3 * i + 3] = b
    return out


def apply_lc(lc: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Apply a 9x9 curvature tensor to (..., 3, 3) fields."""
    flat = eta.reshape(eta.shape[:-2] + (9,))
    return np.einsum("ab,...b->...a", lc, flat).reshape(eta.shape)


Coefficient = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class MaterialModel:
    """Coefficient set for both models.

    ``Ce``, ``Cmicro`` (6x6 Mandel) and ``Lc`` (9x9) are either constant arrays
    or callables ``x -> array`` describing Lipschitz coefficient fields; the
    latter are sampled once per cell at the centroid. ``mu_c`` scales the
    isotropic coupling ``C_c skew e = 2 mu_c skew e`` of the gauge model.
    """

    Ce: Coefficient
    Cmicro: Coefficient
    Lc: Coefficient
    mu_c: float = 0.0
    lc_kind: str = "full"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def is_constant(self) -> bool:
        return not any(callable(t) for t in (self.Ce, self.Cmicro, self.Lc))

    def at(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-point (Ce, Cmicro, Lc) arrays of shape (n, 6, 6)/(n, 9, 9)."""
        points = np.atleast_2d(points)
        out = []
        for t in (self.Ce, self.Cmicro, self.Lc):
            if callable(t):
                out.append(np.stack([np.asarray(t(x), dtype=float) for x in points]))
            else:
                t = np.asarray(t, dtype=float)
                out.append(np.broadcast_to(t, (len(points),) + t.shape))
        return tuple(out)

    def constants(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.is_constant:
            raise MaterialError("spatially varying coefficients have no single constant value")
        return tuple(np.asarray(t, dtype=float) for t in (self.Ce, self.Cmicro, self.Lc))


def default_material(mu_c: float = 0.0) -> MaterialModel:
    """Identity-like harness defaults (not material data)."""
    return MaterialModel(np.eye(6), np.eye(6), np.eye(9), mu_c=mu_c, lc_kind="scalar")


@dataclass
class AssumptionReport:
    C_e: float
    C_micro: float
    L_c: float
    symmetry_defects: dict
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_violated(self) -> None:
        if self.violations:
            raise MaterialError("; ".join(self.violations))


def check_assumption_A(m: MaterialModel, points: np.ndarray | None = None) -> AssumptionReport:
    """Exact symmetry and positivity constants of Ce, Cmicro, Lc.

    Spatially varying coefficients are checked at ``points`` (default: a
    5x5x5 grid of the unit cube).
    """
    if points is None:
        t = np.linspace(0.0, 1.0, 5)
        points = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    if not m.is_constant:
        samples = m.at(points)
    else:
        samples = tuple(np.asarray(t, dtype=float)[None] for t in (m.Ce, m.Cmicro, m.Lc))
    names = ("Ce", "Cmicro", "Lc")
    mins, defects, violations = {}, {}, []
    for name, arr in zip(names, samples):
        defects[name] = float(np.abs(arr - np.swapaxes(arr, -1, -2)).max())
        if defects[name] > 1e-12 * max(1.0, float(np.abs(arr).max())):
            violations.append(f"{name}: not symmetric (defect {defects[name]:.3e})")
        mins[name] = float(np.linalg.eigvalsh(sym(arr)).min())
        if mins[name] <= 0:
            violations.append(f"{name}: not positive definite (min eigenvalue {mins[name]:.6g})")
    if m.mu_c < 0:
        violations.append(f"Cc: mu_c = {m.mu_c} < 0, not positive semi-definite")
    return AssumptionReport(mins["Ce"], mins["Cmicro"], mins["Lc"], defects, violations)


def block_A(m: MaterialModel) -> np.ndarray:
    """12x12 Mandel matrix of ((Ce, -Ce), (-Ce, Ce + Cmicro))."""
    ce, cm, _ = m.constants()
    return np.block([[ce, -ce], [-ce, ce + cm]])


def A_bound(m: MaterialModel) -> float:
    """Lower bound (2/9) min{C_e, C_micro} for the block tensor."""
    rep = check_assumption_A(m)
    return 2.0 / 9.0 * min(rep.C_e, rep.C_micro)


def verify_A_bound(m: MaterialModel, samples: int = 100_000, seed: int = 0) -> float:
    """Most negative value of <A s, s> - bound |s|^2 over random unit pairs.

    Returns the maximal violation (``>= 0``; 0 means none observed).
    """
    A = block_A(m)
    bound = A_bound(m)
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((samples, 12))
    s /= np.linalg.norm(s, axis=1)[:, None]
    gap = np.einsum("ni,ij,nj->n", s, A, s) - bound
    return float(max(0.0, -gap.min()))
