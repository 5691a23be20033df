"""Discrete row-wise Helmholtz splitting P = grad q + Q of Nedelec fields.

q lives in the order-1 Lagrange space with zero boundary values. Gradients of
those functions are exactly representable in the lowest-order Nedelec space
(``fem.gradient_matrix``), so Q = P - G q is a genuine Nedelec field that is
L2-orthogonal to all discrete gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .assembly import assemble_laplacian, assemble_mass
from .fem import FeSpace
from .linalg import cg_solve, dot
from .mesh import TetMesh, build_cube_mesh


@dataclass
class Decomposition:
    q: np.ndarray  # 3*V, row-wise P1 potentials
    Q: np.ndarray  # 3*E, Nedelec coefficients
    norm_P: float
    norm_grad_q: float
    norm_Q: float
    pythagoras_defect: float  # |P|^2 - |grad q|^2 - |Q|^2, relative to |P|^2
    divergence_defect: float  # max_v |<Q, grad v>| / (|Q| |grad v|)
    cg_iterations: int

    def as_row(self) -> dict:
        return {
            "norm_P": self.norm_P,
            "norm_grad_q": self.norm_grad_q,
            "norm_Q": self.norm_Q,
            "pythagoras_defect": self.pythagoras_defect,
            "divergence_defect": self.divergence_defect,
        }


class HelmholtzOperators:
    """Mass, gradient and Laplace matrices shared by repeated decompositions."""

    def __init__(self, space: FeSpace):
        if space.kind != "nedelec0_tensor3":
            raise ValueError("Helmholtz splitting needs a nedelec0_tensor3 space")
        mesh = space.mesh
        self.space = space
        self.mass = assemble_mass(space)
        self.G = fem.gradient_matrix(mesh)
        self.laplacian = assemble_laplacian(mesh)
        interior = np.nonzero(~mesh.boundary_vertex)[0]
        self.free = np.sort((3 * interior[:, None] + np.arange(3)).ravel())
        self.L_ff = self.laplacian[self.free][:, self.free].tocsr()
        self.grad_norms = np.sqrt(self.L_ff.diagonal())

    def norm(self, P: np.ndarray) -> float:
        return float(np.sqrt(max(dot(P, self.mass @ P), 0.0)))

    def weak_divergence(self, P: np.ndarray) -> np.ndarray:
        """``int <P_row, grad v_j>`` for every interior hat function v_j."""
        return (self.G.T @ (self.mass @ P))[self.free]


def decompose(P: np.ndarray, space: FeSpace | None = None, ops: HelmholtzOperators | None = None,
              rel_tol: float = 1e-13) -> Decomposition:
    """Split Nedelec coefficients ``P`` into ``G q + Q``.

    Each row potential solves ``int <grad q_i, grad v> = int <P_i, grad v>``
    for all interior P1 test functions v.
    """
    if ops is None:
        if space is None:
            raise ValueError("need a space or precomputed operators")
        ops = HelmholtzOperators(space)
    P = np.asarray(P, dtype=float)
    rhs = ops.weak_divergence(P)
    res = cg_solve(ops.L_ff, rhs, rel_tol=rel_tol)
    q = np.zeros(ops.laplacian.shape[0])
    q[ops.free] = res.x
    gq = ops.G @ q
    Q = P - gq
    nP, ngq, nQ = ops.norm(P), ops.norm(gq), ops.norm(Q)
    pyth = abs(nP ** 2 - ngq ** 2 - nQ ** 2) / nP ** 2 if nP > 0 else 0.0
    div = ops.weak_divergence(Q)
    if nQ > 0 and len(div):
        div_defect = float(np.max(np.abs(div) / ops.grad_norms) / nQ)
    else:
        div_defect = 0.0
    return Decomposition(q, Q, nP, ngq, nQ, pyth, div_defect, res.iterations)


def idempotence_defect(dec: Decomposition, ops: HelmholtzOperators, rel_tol: float = 1e-13) -> float:
    """``||Q' - Q|| / ||Q||`` where Q' is the divergence-free part of Q."""
    if dec.norm_Q == 0:
        return 0.0
    again = decompose(dec.Q, ops=ops, rel_tol=rel_tol)
    return ops.norm(again.Q - dec.Q) / dec.norm_Q


def tangential_trace_report(space: FeSpace, Q: np.ndarray) -> float:
    """Largest |coefficient| on tangentially constrained DOFs."""
    if len(space.constrained_dofs) == 0:
        return 0.0
    return float(np.max(np.abs(Q[space.constrained_dofs])))


def broken_gradient_seminorm(space: FeSpace, Q: np.ndarray) -> float:
    """``(sum_cells int |grad Q|^2)^(1/2)`` of a Nedelec tensor field."""
    mesh = space.mesh
    gl = fem.grad_lambda(mesh.jacobians)
    i, j = fem.LOCAL_EDGES[:, 0], fem.LOCAL_EDGES[:, 1]
    # d_k phi_m = d_k lam_i d_m lam_j - d_k lam_j d_m lam_i, constant per cell
    dphi = np.einsum("cek,cem->cemk", gl[:, i], gl[:, j]) - np.einsum("cek,cem->cemk", gl[:, j], gl[:, i])
    dphi *= mesh.cell_edge_sign[:, :, None, None]
    c = Q[space.cell_dofs].reshape(mesh.num_cells, 6, 3)
    grad = np.einsum("cemk,cer->crmk", dphi, c)
    return float(np.sqrt(np.sum(mesh.volumes * np.einsum("crmk,crmk->c", grad, grad))))


def h1_boundedness_probe(levels, P_field, cap: float = 1e3) -> list[dict]:
    """Norms of the divergence-free part of the interpolant of ``P_field``
    under refinement. Tangential DOFs are kept as interpolated."""
    rows = []
    for n in levels:
        mesh = build_cube_mesh(n) if not isinstance(n, TetMesh) else n
        space = fem.build_space(mesh, "nedelec0_tensor3")
        P = fem.interpolate(space, P_field)
        dec = decompose(P, space)
        semi = broken_gradient_seminorm(space, dec.Q)
        rows.append({"n": mesh.n, "h": mesh.h, "norm_Q": dec.norm_Q, "broken_grad_Q": semi,
                     "bounded": bool(semi <= cap)})
    return rows
