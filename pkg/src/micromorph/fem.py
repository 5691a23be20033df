"""Quadrature, reference bases, DOF maps and interpolation.

Three space kinds are supported:

``lagrange_vec3``
    vector Lagrange, order 1 or 2; DOF ``3*node + component`` where nodes are
    the vertices followed (order 2) by the edge midpoints.
``nedelec0_tensor3``
    lowest-order Nedelec (first kind) applied to each row of a 3x3 field; DOF
    ``3*edge + row``.
``lagrange_tensor3``
    order-1 Lagrange for each of the nine tensor entries; DOF
    ``9*vertex + 3*row + col``. Only used for the H1-conforming comparison of
    the microdistortion, whose tangential boundary condition is imposed by a
    penalty (``penalty_dofs``) instead of elimination.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .mesh import LOCAL_EDGES, MeshError, TetMesh

KINDS = ("lagrange_vec3", "nedelec0_tensor3", "lagrange_tensor3")

REF_VERTICES = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
# gradients of the barycentric coordinates on the reference tet
REF_GRAD_LAMBDA = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

CHUNK = 2048


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray  # (nq, 4) barycentric coordinates
    weights: np.ndarray  # (nq,), sum 1/6
    degree: int

    @property
    def ref_points(self) -> np.ndarray:
        return self.points[:, 1:]


def _gauss_jacobi01(m: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights on [0, 1] for the weight (1 - t)**alpha."""
    x, w = roots_jacobi(m, alpha, 0.0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def quadrature(degree: int) -> Quadrature:
    """Positive-weight rule on the reference tet, exact to ``degree``.

    Degree 1 is the centroid rule and degree 2 the symmetric 4-point rule;
    higher degrees use the collapsed (conical) Gauss-Jacobi product.
    """
    if degree not in (1, 2, 4, 6):
        raise ValueError(f"unsupported quadrature degree {degree}; choose from 1, 2, 4, 6")
    if degree == 1:
        bary = np.full((1, 4), 0.25)
        weights = np.array([1.0 / 6.0])
    elif degree == 2:
        a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        b = (5.0 - np.sqrt(5.0)) / 20.0
        bary = np.full((4, 4), b)
        np.fill_diagonal(bary, a)
        weights = np.full(4, 1.0 / 24.0)
    else:
        m = (degree + 2) // 2
        t1, w1 = _gauss_jacobi01(m, 2.0)
        t2, w2 = _gauss_jacobi01(m, 1.0)
        t3, w3 = _gauss_jacobi01(m, 0.0)
        u, v, w = (g.ravel() for g in np.meshgrid(t1, t2, t3, indexing="ij"))
        weights = np.einsum("i,j,k->ijk", w1, w2, w3).ravel()
        xi = np.stack([u, (1 - u) * v, (1 - u) * (1 - v) * w], axis=1)
        bary = np.column_stack([1.0 - xi.sum(axis=1), xi])
    bary.setflags(write=False)
    weights.setflags(write=False)
    return Quadrature(bary, weights, degree)


# 2-point Gauss on [0, 1] for edge moments
EDGE_GAUSS_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE_GAUSS_W = np.array([0.5, 0.5])


# --------------------------------------------------------------------------
# reference / physical basis functions


def _barycentric(ref_point) -> np.ndarray:
    xi = np.asarray(ref_point, dtype=float)
    return np.concatenate([[1.0 - xi.sum()], xi])


def _p2_values(lam: np.ndarray) -> np.ndarray:
    """P2 shape functions from barycentric coordinates (..., 4) -> (..., 10)."""
    vert = lam * (2.0 * lam - 1.0)
    edge = 4.0 * lam[..., LOCAL_EDGES[:, 0]] * lam[..., LOCAL_EDGES[:, 1]]
    return np.concatenate([vert, edge], axis=-1)


def _p2_grads(lam: np.ndarray, glam: np.ndarray) -> np.ndarray:
    """Gradients of the P2 shape functions.

    ``lam`` is (..., nq, 4), ``glam`` the (..., 4, 3) barycentric gradients;
    returns (..., nq, 10, 3).
    """
    gv = (4.0 * lam - 1.0)[..., :, None] * glam[..., None, :, :]
    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    ge = 4.0 * (lam[..., :, i, None] * glam[..., None, j, :] + lam[..., :, j, None] * glam[..., None, i, :])
    return np.concatenate([gv, ge], axis=-2)


def eval_lagrange_basis(order: int, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Scalar Lagrange shape functions and reference gradients at a point."""
    lam = _barycentric(ref_point)
    if order == 1:
        return lam.copy(), REF_GRAD_LAMBDA.copy()
    if order == 2:
        return _p2_values(lam), _p2_grads(lam[None], REF_GRAD_LAMBDA)[0]
    raise ValueError(f"unsupported Lagrange order {order}")


def grad_lambda(jac: np.ndarray) -> np.ndarray:
    """Physical gradients of the barycentric coordinates, (..., 4, 3)."""
    return np.einsum("ak,...kj->...aj", REF_GRAD_LAMBDA, np.linalg.inv(jac))


def eval_nedelec_basis(jac: np.ndarray, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Whitney edge functions of one cell at a reference point.

    Returns the six vector values and their (constant) curls, both (6, 3),
    in local edge order and local orientation.
    """
    if abs(np.linalg.det(jac)) < 1e-14:
        raise MeshError("degenerate cell")
    lam = _barycentric(ref_point)
    gl = grad_lambda(jac)
    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    values = lam[i, None] * gl[j] - lam[j, None] * gl[i]
    curls = 2.0 * np.cross(gl[i], gl[j])
    return values, curls


# --------------------------------------------------------------------------
# spaces


@dataclass(frozen=True, eq=False)
class FeSpace:
    kind: str
    order: int
    mesh: TetMesh
    dof_count: int
    cell_dofs: np.ndarray  # (T, nloc)
    cell_signs: np.ndarray  # (T, nloc)
    constrained_dofs: np.ndarray  # sorted
    penalty_dofs: np.ndarray  # sorted, lagrange_tensor3 only

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.nonzero(mask)[0]

    @property
    def num_nodes(self) -> int:
        m = self.mesh
        if self.kind == "nedelec0_tensor3":
            return m.num_edges
        return m.num_vertices + (m.num_edges if self.order == 2 else 0)

    def node_coordinates(self) -> np.ndarray:
        m = self.mesh
        if self.kind == "nedelec0_tensor3":
            return m.vertices[m.edges].mean(axis=1)
        if self.order == 1:
            return m.vertices
        return np.concatenate([m.vertices, m.vertices[m.edges].mean(axis=1)])


def build_space(m: TetMesh, kind: str, order: int = 1) -> FeSpace:
    if kind not in KINDS:
        raise ValueError(f"unknown space kind {kind!r}")
    T = m.num_cells
    empty = np.zeros(0, dtype=np.int64)
    if kind == "lagrange_vec3":
        if order not in (1, 2):
            raise ValueError(f"unsupported Lagrange order {order}")
        nodes = m.cells
        bnodes = np.nonzero(m.boundary_vertex)[0]
        if order == 2:
            nodes = np.concatenate([m.cells, m.num_vertices + m.cell_edges], axis=1)
            bnodes = np.concatenate([bnodes, m.num_vertices + np.nonzero(m.boundary_edge)[0]])
        nnodes = m.num_vertices + (m.num_edges if order == 2 else 0)
        cell_dofs = (3 * nodes[:, :, None] + np.arange(3)).reshape(T, -1)
        constrained = np.sort((3 * bnodes[:, None] + np.arange(3)).ravel())
        return FeSpace(kind, order, m, 3 * nnodes, cell_dofs, np.ones(cell_dofs.shape), constrained, empty)

    if order != 1:
        raise ValueError(f"{kind} supports order 1 only")
    if kind == "nedelec0_tensor3":
        cell_dofs = (3 * m.cell_edges[:, :, None] + np.arange(3)).reshape(T, -1)
        signs = np.repeat(m.cell_edge_sign, 3, axis=1)
        bedges = np.nonzero(m.boundary_edge)[0]
        constrained = np.sort((3 * bedges[:, None] + np.arange(3)).ravel())
        return FeSpace(kind, 1, m, 3 * m.num_edges, cell_dofs, signs, constrained, empty)

    cell_dofs = (9 * m.cells[:, :, None] + np.arange(9)).reshape(T, -1)
    return FeSpace(kind, 1, m, 9 * m.num_vertices, cell_dofs, np.ones(cell_dofs.shape), empty,
                   _tangential_penalty_dofs(m))


def _tangential_penalty_dofs(m: TetMesh) -> np.ndarray:
    """Tensor-Lagrange DOFs carrying tangential components at boundary nodes.

    A vertex on the cube face ``x_a = const`` has tangential components
    ``(row, col)`` with ``col != a``; vertices on several faces (cube edges and
    corners) collect the union, which clamps every component there.
    """
    x = m.vertices
    on_plane = (np.abs(x) < 1e-12) | (np.abs(x - 1.0) < 1e-12)  # (V, 3)
    tangential = np.zeros((m.num_vertices, 3), dtype=bool)  # per column index
    for a in range(3):
        cols = [c for c in range(3) if c != a]
        tangential[np.ix_(on_plane[:, a], cols)] = True
    vert, col = np.nonzero(tangential)
    dofs = 9 * vert[:, None] + 3 * np.arange(3)[None, :] + col[:, None]
    return np.sort(dofs.ravel())


def iter_chunks(total: int, size: int = CHUNK) -> Iterator[slice]:
    for start in range(0, total, size):
        yield slice(start, min(start + size, total))


def vector_basis(space: FeSpace, cells: slice, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nc, nq, nloc, 3) and gradients (nc, nq, nloc, 3, 3) of a
    lagrange_vec3 basis; ``grads[..., k, :]`` is the gradient of component k."""
    if space.kind != "lagrange_vec3":
        raise ValueError("vector_basis needs a lagrange_vec3 space")
    jac = space.mesh.jacobians[cells]
    gl = grad_lambda(jac)  # (nc, 4, 3)
    nc, nq = len(jac), len(bary)
    if space.order == 1:
        N = np.broadcast_to(bary, (nc, nq, 4))
        dN = np.broadcast_to(gl[:, None], (nc, nq, 4, 3))
    else:
        N = np.broadcast_to(_p2_values(bary), (nc, nq, 10))
        dN = _p2_grads(np.broadcast_to(bary, (nc, nq, 4)), gl)
    nn = N.shape[-1]
    vals = np.zeros((nc, nq, nn, 3, 3))
    grads = np.zeros((nc, nq, nn, 3, 3, 3))
    for k in range(3):
        vals[:, :, :, k, k] = N
        grads[:, :, :, k, k, :] = dN
    return vals.reshape(nc, nq, 3 * nn, 3), grads.reshape(nc, nq, 3 * nn, 3, 3)


def tensor_basis(space: FeSpace, cells: slice, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and row-wise curls, each (nc, nq, nloc, 3, 3), of a tensor space
    (signs applied)."""
    jac = space.mesh.jacobians[cells]
    gl = grad_lambda(jac)
    nc, nq = len(jac), len(bary)
    if space.kind == "nedelec0_tensor3":
        i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        phi = bary[None, :, i, None] * gl[:, None, j, :] - bary[None, :, j, None] * gl[:, None, i, :]
        curl = 2.0 * np.cross(gl[:, i], gl[:, j])  # (nc, 6, 3)
        sign = space.mesh.cell_edge_sign[cells]
        phi = phi * sign[:, None, :, None]
        curl = curl * sign[:, :, None]
        vals = np.zeros((nc, nq, 6, 3, 3, 3))
        curls = np.zeros((nc, nq, 6, 3, 3, 3))
        for r in range(3):
            vals[:, :, :, r, r, :] = phi
            curls[:, :, :, r, r, :] = curl[:, None]
        return vals.reshape(nc, nq, 18, 3, 3), curls.reshape(nc, nq, 18, 3, 3)
    if space.kind == "lagrange_tensor3":
        vals = np.zeros((nc, nq, 4, 3, 3, 3, 3))
        curls = np.zeros((nc, nq, 4, 3, 3, 3, 3))
        eye = np.eye(3)
        for r in range(3):
            for c in range(3):
                vals[:, :, :, r, c, r, c] = bary
                # curl(N e_c) = grad N x e_c
                curls[:, :, :, r, c, r, :] = np.cross(gl, eye[c])[:, None]
        return vals.reshape(nc, nq, 36, 3, 3), curls.reshape(nc, nq, 36, 3, 3)
    raise ValueError(f"tensor_basis does not support {space.kind}")


# --------------------------------------------------------------------------
# interpolation and evaluation


def _field_values(field, x: np.ndarray) -> np.ndarray:
    fn = getattr(field, "value", field)
    return np.asarray(fn(x), dtype=float)


def interpolate(space: FeSpace, field: Callable | object) -> np.ndarray:
    """Canonical interpolant: nodal values (Lagrange) or per-row tangential
    edge moments by 2-point Gauss (Nedelec). Constrained DOFs are not zeroed."""
    m = space.mesh
    if space.kind == "nedelec0_tensor3":
        a, b = m.vertices[m.edges[:, 0]], m.vertices[m.edges[:, 1]]
        tangent = b - a
        coeff = np.zeros((m.num_edges, 3))
        for t, w in zip(EDGE_GAUSS_T, EDGE_GAUSS_W):
            vals = _field_values(field, a + t * tangent)  # (E, 3, 3)
            coeff += w * np.einsum("erc,ec->er", vals, tangent)
        return coeff.ravel()
    vals = _field_values(field, space.node_coordinates())
    return vals.reshape(len(vals), -1).ravel().copy()


def gradient_matrix(m: TetMesh, components: int = 3) -> sp.csr_matrix:
    """Exact inclusion of gradients of P1 fields into the Nedelec space.

    Maps ``3*vertex + row`` coefficients to ``3*edge + row`` edge moments
    (``components=1`` gives the scalar E x V incidence matrix).
    """
    E = m.num_edges
    rows = np.repeat(np.arange(E), 2)
    cols = m.edges.ravel()
    vals = np.tile([-1.0, 1.0], E)
    g = sp.csr_matrix((vals, (rows, cols)), shape=(E, m.num_vertices))
    if components == 1:
        return g
    return sp.kron(g, sp.identity(components), format="csr")


def scalar_lagrange(order: int, jac: np.ndarray, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scalar shape functions (nq, nn) and physical gradients (nc, nq, nn, 3)."""
    gl = grad_lambda(jac)
    nc, nq = len(jac), len(bary)
    if order == 1:
        return bary, np.broadcast_to(gl[:, None], (nc, nq, 4, 3))
    return _p2_values(bary), _p2_grads(np.broadcast_to(bary, (nc, nq, 4)), gl)


def nedelec_edge_functions(m: TetMesh, cells: slice, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed Whitney functions (nc, nq, 6, 3) and their curls (nc, 6, 3)."""
    gl = grad_lambda(m.jacobians[cells])
    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    sign = m.cell_edge_sign[cells]
    phi = bary[None, :, i, None] * gl[:, None, j, :] - bary[None, :, j, None] * gl[:, None, i, :]
    curl = 2.0 * np.cross(gl[:, i], gl[:, j])
    return phi * sign[:, None, :, None], curl * sign[:, :, None]


def eval_vector(space: FeSpace, coeffs: np.ndarray, cells: slice, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FE vector field values (nc, nq, 3) and gradients (nc, nq, 3, 3)."""
    if space.kind != "lagrange_vec3":
        raise ValueError("eval_vector needs a lagrange_vec3 space")
    N, dN = scalar_lagrange(space.order, space.mesh.jacobians[cells], bary)
    c = coeffs[space.cell_dofs[cells]].reshape(len(dN), -1, 3)  # (nc, nn, 3)
    return np.einsum("qa,cak->cqk", N, c), np.einsum("cqaj,cak->cqkj", dN, c)


def eval_tensor(space: FeSpace, coeffs: np.ndarray, cells: slice, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FE tensor field values and row-wise curls, each (nc, nq, 3, 3)."""
    m = space.mesh
    if space.kind == "nedelec0_tensor3":
        phi, curl = nedelec_edge_functions(m, cells, bary)
        c = coeffs[space.cell_dofs[cells]].reshape(len(curl), 6, 3)  # (nc, edge, row)
        vals = np.einsum("cqek,cer->cqrk", phi, c)
        curls = np.einsum("cek,cer->crk", curl, c)
        return vals, np.broadcast_to(curls[:, None], vals.shape)
    if space.kind == "lagrange_tensor3":
        gl = grad_lambda(m.jacobians[cells])
        c = coeffs[space.cell_dofs[cells]].reshape(len(gl), 4, 3, 3)
        vals = np.einsum("qa,cars->cqrs", bary, c)
        grad = np.einsum("caj,cars->crsj", gl, c)  # d_j P_rs, constant per cell
        curls = np.einsum("lkj,crjk->crl", _EPS, grad)
        return vals, np.broadcast_to(curls[:, None], vals.shape)
    raise ValueError(f"eval_tensor does not support {space.kind}")


_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


def physical_points(m: TetMesh, cells: slice, bary: np.ndarray) -> np.ndarray:
    """Quadrature points (nc, nq, 3) for barycentric coordinates ``bary``."""
    return np.einsum("qa,cad->cqd", bary, m.vertices[m.cells[cells]])
