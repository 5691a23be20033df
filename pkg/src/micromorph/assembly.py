"""Assembly of the micromorphic and gauge forms, loads, masses, post-processing.

Unknowns of the coupled system are ordered ``[u dofs | P dofs]``. Element
matrices are symmetrised before scattering and chunks are merged in cell
order, so the global matrix is exactly symmetric and bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import FeSpace, quadrature
from .linalg import SparseSymMatrix, apply_dirichlet, from_triplets
from .material import MaterialModel, check_assumption_A, from_mandel, mandel, skew
from .mesh import TetMesh

DEFAULT_PENALTY = 1e6


@dataclass
class SystemMatrices:
    K: SparseSymMatrix  # constraints eliminated
    rhs: np.ndarray
    n_u: int
    constrained: np.ndarray
    parts: dict = field(default_factory=dict)  # raw, unconstrained pieces
    mass: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.K.shape[0]

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.dim, dtype=bool)
        mask[self.constrained] = False
        return np.nonzero(mask)[0]


def _cell_material(material: MaterialModel, mesh: TetMesh, cells: slice):
    if material.is_constant:
        ce, cm, lc = material.constants()
        n = cells.stop - cells.start
        return (np.broadcast_to(ce, (n, 6, 6)), np.broadcast_to(cm, (n, 6, 6)), np.broadcast_to(lc, (n, 9, 9)))
    return material.at(mesh.centroids[cells])


def _chunk_size(nq: int, nloc: int) -> int:
    return max(32, min(fem.CHUNK, 2 ** 21 // (nq * nloc * 9)))


def _assemble_form(mesh, space_u, space_P, material, quad_degree, terms):
    """Sum of the requested energy terms as a sparse matrix.

    ``terms`` may contain "Ce" (elastic: sym(grad u - P), or sym P without a
    u space), "Cmicro" (sym P), "Lc" (Curl P) and "Cc" (2 mu_c skew P).
    """
    q = quadrature(quad_degree)
    bary, wq = q.points, q.weights
    n_u = space_u.dof_count if space_u is not None else 0
    n = n_u + space_P.dof_count
    lu = space_u.cell_dofs.shape[1] if space_u is not None else 0
    lp = space_P.cell_dofs.shape[1]
    nloc = lu + lp
    total = None
    for cells in fem.iter_chunks(mesh.num_cells, _chunk_size(len(wq), nloc)):
        nc = cells.stop - cells.start
        wdet = wq[None, :] * np.abs(np.linalg.det(mesh.jacobians[cells]))[:, None]
        pv, pc = fem.tensor_basis(space_P, cells, bary)
        vals = np.zeros((nc, len(wq), nloc, 3, 3))
        curls = np.zeros_like(vals)
        vals[:, :, lu:] = pv
        curls[:, :, lu:] = pc
        grads = np.zeros_like(vals)
        if space_u is not None:
            _, gu = fem.vector_basis(space_u, cells, bary)
            grads[:, :, :lu] = gu
        ce, cm, lc = _cell_material(material, mesh, cells)
        kloc = np.zeros((nc, nloc, nloc))
        if "Ce" in terms:
            strain = mandel(grads - vals)
            kloc += np.einsum("cq,cqia,cab,cqjb->cij", wdet, strain, ce, strain, optimize=True)
        if "Cmicro" in terms:
            s = mandel(vals)
            kloc += np.einsum("cq,cqia,cab,cqjb->cij", wdet, s, cm, s, optimize=True)
        if "Lc" in terms:
            c = curls.reshape(nc, len(wq), nloc, 9)
            kloc += np.einsum("cq,cqia,cab,cqjb->cij", wdet, c, lc, c, optimize=True)
        if "Cc" in terms and material.mu_c != 0.0:
            w = skew(vals).reshape(nc, len(wq), nloc, 9)
            kloc += 2.0 * material.mu_c * np.einsum("cq,cqia,cqja->cij", wdet, w, w, optimize=True)
        kloc = 0.5 * (kloc + kloc.transpose(0, 2, 1))

        dofs = space_P.cell_dofs[cells] + n_u
        if space_u is not None:
            dofs = np.concatenate([space_u.cell_dofs[cells], dofs], axis=1)
        rows = np.broadcast_to(dofs[:, :, None], kloc.shape).ravel()
        cols = np.broadcast_to(dofs[:, None, :], kloc.shape).ravel()
        part = from_triplets(rows, cols, kloc.ravel(), n)
        total = part if total is None else total + part
    total.sum_duplicates()
    total.sort_indices()
    return total


def _check_spaces(mesh, *spaces):
    for s in spaces:
        if s is not None and s.mesh is not mesh:
            raise ValueError("space is defined on a different mesh")


def constrained_dofs(space_u: FeSpace | None, space_P: FeSpace) -> np.ndarray:
    n_u = 0 if space_u is None else space_u.dof_count
    parts = [space_P.constrained_dofs + n_u]
    if space_u is not None:
        parts.insert(0, space_u.constrained_dofs)
    return np.concatenate(parts).astype(np.int64)


def _penalty_matrix(space_u, space_P, penalty):
    n_u = 0 if space_u is None else space_u.dof_count
    n = n_u + space_P.dof_count
    d = np.zeros(n)
    d[space_P.penalty_dofs + n_u] = penalty
    return sp.diags(d, format="csr")


def assemble_micromorphic(
    mesh: TetMesh,
    space_u: FeSpace,
    space_P: FeSpace,
    material: MaterialModel,
    quad: int = 2,
    rhs: np.ndarray | None = None,
    keep_parts: bool = False,
    penalty: float = DEFAULT_PENALTY,
) -> SystemMatrices:
    """Coupled stiffness of the relaxed micromorphic form.

    ``K_ij = int <Ce sym(grad u_i - P_i), sym(grad u_j - P_j)>
    + <Cmicro sym P_i, sym P_j> + <Lc Curl P_i, Curl P_j>``
    with homogeneous constraints eliminated. A ``lagrange_tensor3`` P space
    receives the tangential penalty on its ``penalty_dofs``.
    """
    _check_spaces(mesh, space_u, space_P)
    if space_u.kind != "lagrange_vec3":
        raise ValueError("u must live in a lagrange_vec3 space")
    if space_P.kind not in ("nedelec0_tensor3", "lagrange_tensor3"):
        raise ValueError("P must live in a tensor space")
    check_assumption_A(material, mesh.centroids if not material.is_constant else None).raise_if_violated()
    KA = _assemble_form(mesh, space_u, space_P, material, quad, ("Ce", "Cmicro"))
    KC = _assemble_form(mesh, space_u, space_P, material, quad, ("Lc",))
    K = KA + KC
    if len(space_P.penalty_dofs):
        K = K + _penalty_matrix(space_u, space_P, penalty)
    cons = constrained_dofs(space_u, space_P)
    b = np.zeros(K.shape[0]) if rhs is None else np.asarray(rhs, dtype=float)
    Kc, bc = apply_dirichlet(K.tocsr(), b, cons)
    parts = {"A": KA, "curl": KC} if keep_parts else {}
    return SystemMatrices(Kc, bc, space_u.dof_count, cons, parts)


def assemble_gauge(
    mesh: TetMesh,
    space_e: FeSpace,
    material: MaterialModel,
    quad: int = 2,
    rhs: np.ndarray | None = None,
    keep_parts: bool = False,
) -> SystemMatrices:
    """Stiffness of ``int <Lc Curl e, Curl v> + <Ce sym e, sym v> + <Cc skew e, skew v>``."""
    _check_spaces(mesh, space_e)
    if space_e.kind != "nedelec0_tensor3":
        raise ValueError("the gauge model needs a nedelec0_tensor3 space")
    rep = check_assumption_A(material, mesh.centroids if not material.is_constant else None)
    bad = [v for v in rep.violations if not v.startswith("Cmicro")]
    if bad:
        raise ValueError("; ".join(bad))
    KA = _assemble_form(mesh, None, space_e, material, quad, ("Ce", "Cc"))
    KC = _assemble_form(mesh, None, space_e, material, quad, ("Lc",))
    K = KA + KC
    b = np.zeros(K.shape[0]) if rhs is None else np.asarray(rhs, dtype=float)
    Kc, bc = apply_dirichlet(K.tocsr(), b, space_e.constrained_dofs)
    parts = {"A": KA, "curl": KC} if keep_parts else {}
    return SystemMatrices(Kc, bc, 0, space_e.constrained_dofs, parts)


def assemble_load(space_u: FeSpace | None, space_P: FeSpace | None, f=None, M=None, degree: int = 6) -> np.ndarray:
    """``[int <f, phi_i> | int <M, Phi_i>]`` over the given spaces."""
    q = quadrature(degree)
    parts = []
    for space, data in ((space_u, f), (space_P, M)):
        if space is None:
            continue
        mesh = space.mesh
        out = np.zeros(space.dof_count)
        if data is None:
            parts.append(out)
            continue
        for cells in fem.iter_chunks(mesh.num_cells, _chunk_size(len(q.weights), 18)):
            wdet = q.weights[None, :] * np.abs(np.linalg.det(mesh.jacobians[cells]))[:, None]
            x = fem.physical_points(mesh, cells, q.points)
            nc, nq = x.shape[:2]
            vals = np.asarray(getattr(data, "value", data)(x.reshape(-1, 3)), dtype=float).reshape((nc, nq) + (-1,))
            if space.kind == "lagrange_vec3":
                N, _ = fem.scalar_lagrange(space.order, mesh.jacobians[cells], q.points)
                loc = np.einsum("cq,cqk,qa->cak", wdet, vals, N)
            elif space.kind == "nedelec0_tensor3":
                phi, _ = fem.nedelec_edge_functions(mesh, cells, q.points)
                loc = np.einsum("cq,cqrk,cqek->cer", wdet, vals.reshape(nc, nq, 3, 3), phi)
            else:
                loc = np.einsum("cq,cqrs,qa->cars", wdet, vals.reshape(nc, nq, 3, 3), q.points)
            out += np.bincount(space.cell_dofs[cells].ravel(), weights=loc.ravel(), minlength=space.dof_count)
        parts.append(out)
    return np.concatenate(parts)


def assemble_mass(space: FeSpace, quad: int = 2) -> SparseSymMatrix:
    """L2 mass matrix (no constraints applied)."""
    mesh = space.mesh
    q = quadrature(quad)
    nloc = space.cell_dofs.shape[1]
    total = None
    for cells in fem.iter_chunks(mesh.num_cells, _chunk_size(len(q.weights), nloc)):
        wdet = q.weights[None, :] * np.abs(np.linalg.det(mesh.jacobians[cells]))[:, None]
        if space.kind == "lagrange_vec3":
            vals, _ = fem.vector_basis(space, cells, q.points)
            kloc = np.einsum("cq,cqik,cqjk->cij", wdet, vals, vals, optimize=True)
        else:
            vals, _ = fem.tensor_basis(space, cells, q.points)
            kloc = np.einsum("cq,cqirs,cqjrs->cij", wdet, vals, vals, optimize=True)
        kloc = 0.5 * (kloc + kloc.transpose(0, 2, 1))
        dofs = space.cell_dofs[cells]
        rows = np.broadcast_to(dofs[:, :, None], kloc.shape).ravel()
        cols = np.broadcast_to(dofs[:, None, :], kloc.shape).ravel()
        part = from_triplets(rows, cols, kloc.ravel(), space.dof_count)
        total = part if total is None else total + part
    total.sum_duplicates()
    total.sort_indices()
    return total


def assemble_laplacian(mesh: TetMesh, components: int = 3) -> SparseSymMatrix:
    """Stiffness of ``int <grad q, grad v>`` on P1 (``components`` copies)."""
    gl = fem.grad_lambda(mesh.jacobians)
    vol = mesh.volumes
    kloc = np.einsum("c,cik,cjk->cij", vol, gl, gl)
    kloc = 0.5 * (kloc + kloc.transpose(0, 2, 1))
    rows = np.broadcast_to(mesh.cells[:, :, None], kloc.shape).ravel()
    cols = np.broadcast_to(mesh.cells[:, None, :], kloc.shape).ravel()
    L = from_triplets(rows, cols, kloc.ravel(), mesh.num_vertices)
    if components == 1:
        return L
    return sp.kron(L, sp.identity(components), format="csr")


def postprocess_stress_moment(
    space_u: FeSpace, space_P: FeSpace, x: np.ndarray, material: MaterialModel
) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centroid force stress ``Ce sym(grad u - P)`` and moment ``Lc Curl P``."""
    mesh = space_u.mesh
    centroid = np.full((1, 4), 0.25)
    cells = slice(0, mesh.num_cells)
    u, P = x[: space_u.dof_count], x[space_u.dof_count:]
    _, gu = fem.eval_vector(space_u, u, cells, centroid)
    pv, pc = fem.eval_tensor(space_P, P, cells, centroid)
    ce, _, lc = _cell_material(material, mesh, cells)
    eps = mandel(gu[:, 0] - pv[:, 0])
    sigma = from_mandel(np.einsum("cab,cb->ca", ce, eps))
    m = np.einsum("cab,cb->ca", lc, pc[:, 0].reshape(-1, 9)).reshape(-1, 3, 3)
    return sigma, m
