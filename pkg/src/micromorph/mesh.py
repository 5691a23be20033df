"""Kuhn-triangulated unit-cube meshes with full entity connectivity."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np

# Local vertex pairs of the six tetrahedron edges and the three vertices of
# the face opposite local vertex k.
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


class MeshError(ValueError):
    """Structural defect in a mesh (degenerate cell, bad input)."""


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Tetrahedral mesh of the unit cube.

    Edges are oriented from the lower to the higher global vertex index;
    ``cell_edge_sign[c, k]`` is +1 when local edge ``k`` of cell ``c`` runs in
    the global direction and -1 otherwise.
    """

    n: int
    vertices: np.ndarray  # (V, 3)
    cells: np.ndarray  # (T, 4), positively oriented
    edges: np.ndarray  # (E, 2), low -> high
    cell_edges: np.ndarray  # (T, 6)
    cell_edge_sign: np.ndarray  # (T, 6)
    faces: np.ndarray  # (F, 3), sorted vertex triples
    cell_faces: np.ndarray  # (T, 4), face opposite local vertex k
    boundary_faces: np.ndarray  # (B, 2) rows of (cell, local face)
    boundary_normals: np.ndarray  # (B, 3) outward unit normals
    boundary_vertex: np.ndarray  # (V,) bool
    boundary_edge: np.ndarray  # (E,) bool
    _jac: np.ndarray = field(repr=False, default=None)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def jacobians(self) -> np.ndarray:
        """Per-cell affine map matrices, columns ``x_k - x_0``."""
        return self._jac

    @property
    def volumes(self) -> np.ndarray:
        return np.linalg.det(self._jac) / 6.0

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def boundary_face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces[self.cell_faces[self.boundary_faces[:, 0], self.boundary_faces[:, 1]]]]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def _kuhn_cells(n: int) -> np.ndarray:
    m = n + 1
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = np.stack([i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")], axis=1)
    stride = np.array([1, m, m * m])

    cells = []
    for perm in permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] += 1
            path.append(step)
        offsets = np.array([p @ stride for p in path])
        # det[e_p0, e_p1, e_p2] carries the permutation sign; odd ones get
        # their last two vertices swapped.
        parity = np.linalg.det(np.eye(3)[list(perm)])
        if parity < 0:
            offsets = offsets[[0, 1, 3, 2]]
        cells.append(base @ stride + offsets[:, None])
    # cells[p][local, cube] -> (cube, perm, local)
    return np.stack(cells, axis=0).transpose(2, 0, 1).reshape(-1, 4)


def build_cube_mesh(n: int) -> TetMesh:
    """Kuhn triangulation of [0, 1]^3 with ``n`` subcubes per direction."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    m = n + 1
    ticks = np.linspace(0.0, 1.0, m)
    # vertex (i, j, k) -> i + m*j + m*m*k
    z, y, x = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    vertices = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    cells = _kuhn_cells(n)
    return _finalize(n, vertices, cells)


def _finalize(n: int, vertices: np.ndarray, cells: np.ndarray) -> TetMesh:
    x = vertices[cells]
    jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        bad = int(np.argmin(det))
        raise MeshError(f"cell {bad} has non-positive signed volume {det[bad] / 6:.3e}")

    local = cells[:, LOCAL_EDGES]  # (T, 6, 2)
    sign = np.where(local[..., 0] < local[..., 1], 1.0, -1.0)
    pairs = np.sort(local, axis=2).reshape(-1, 2)
    edges, edge_inv = np.unique(pairs, axis=0, return_inverse=True)
    cell_edges = edge_inv.reshape(-1, 6)

    tris = np.sort(cells[:, LOCAL_FACES], axis=2).reshape(-1, 3)
    faces, face_inv, face_count = np.unique(tris, axis=0, return_inverse=True, return_counts=True)
    cell_faces = face_inv.reshape(-1, 4)
    if np.any(face_count > 2):
        raise MeshError("a face is shared by more than two cells")

    on_boundary = face_count[cell_faces] == 1
    bcell, bloc = np.nonzero(on_boundary)
    boundary_faces = np.stack([bcell, bloc], axis=1)
    fv = cells[bcell[:, None], LOCAL_FACES[bloc]]
    p0, p1, p2 = vertices[fv[:, 0]], vertices[fv[:, 1]], vertices[fv[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    opposite = vertices[cells[bcell, bloc]]
    flip = np.einsum("ij,ij->i", normals, opposite - p0) > 0
    normals[flip] *= -1.0

    boundary_vertex = np.zeros(len(vertices), dtype=bool)
    boundary_vertex[faces[face_count == 1].ravel()] = True
    boundary_edge = np.zeros(len(edges), dtype=bool)
    bfaces = np.nonzero(face_count == 1)[0]
    # an edge is on the boundary iff it belongs to a boundary face
    face_edge_keys = np.concatenate([faces[bfaces][:, [0, 1]], faces[bfaces][:, [0, 2]], faces[bfaces][:, [1, 2]]])
    key = edges[:, 0].astype(np.int64) * len(vertices) + edges[:, 1]
    fkey = face_edge_keys[:, 0].astype(np.int64) * len(vertices) + face_edge_keys[:, 1]
    boundary_edge[np.searchsorted(key, np.unique(fkey))] = True

    return TetMesh(
        n=n,
        vertices=vertices,
        cells=cells,
        edges=edges,
        cell_edges=cell_edges,
        cell_edge_sign=sign,
        faces=faces,
        cell_faces=cell_faces,
        boundary_faces=boundary_faces,
        boundary_normals=normals,
        boundary_vertex=boundary_vertex,
        boundary_edge=boundary_edge,
        _jac=jac,
    )


def refine_uniform(m: TetMesh) -> TetMesh:
    """Halve the mesh size.

    The Kuhn triangulation with 2n subcubes is a refinement of the one with n
    (every Kuhn cutting plane of the coarse mesh is also one of the fine
    mesh), so the refined mesh is the 2n cube mesh.
    """
    return build_cube_mesh(2 * m.n)


def cell_geometry(m: TetMesh, c: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Affine map ``x = x0 + J xi`` of cell ``c``: returns (J, J^-T, volume)."""
    jac = m.jacobians[c]
    return geometry_from_jacobian(jac)


def geometry_from_jacobian(jac: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    det = float(np.linalg.det(jac))
    if abs(det) <= 1e-14 * max(1.0, float(np.abs(jac).max()) ** 3):
        raise MeshError(f"degenerate cell: det J = {det:.3e}")
    return jac, np.linalg.inv(jac).T, abs(det) / 6.0


def check_mesh(m: TetMesh) -> None:
    """Raise MeshError if any structural invariant fails."""
    if np.any(m.volumes <= 0):
        raise MeshError("non-positive cell volume")
    counts = np.bincount(m.cell_faces.ravel(), minlength=m.num_faces)
    if not np.all((counts == 1) | (counts == 2)):
        raise MeshError("face incidence other than 1 or 2")
    euler = m.num_vertices - m.num_edges + m.num_faces - m.num_cells
    if euler != 1:
        raise MeshError(f"Euler characteristic {euler} != 1")
    local = m.cells[:, LOCAL_EDGES]
    expect = np.where(local[..., 0] < local[..., 1], 1.0, -1.0)
    if not np.array_equal(expect, m.cell_edge_sign):
        raise MeshError("edge sign table inconsistent with vertex order")
    ends = m.edges[m.cell_edges]
    if not np.array_equal(np.sort(local, axis=2), ends):
        raise MeshError("cell_edges do not match cell vertices")


def write_vtk(path: str | Path, m: TetMesh, cell_data: dict[str, np.ndarray] | None = None) -> None:
    """Legacy ASCII VTK unstructured grid (cell type 10) with cell fields.

    Scalars are written as SCALARS, 3-vectors as VECTORS and 3x3 arrays as
    TENSORS.
    """
    path = Path(path)
    lines = [
        "# vtk DataFile Version 3.0",
        f"micromorph mesh n={m.n}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {m.num_vertices} double",
    ]
    lines += [" ".join(repr(float(c)) for c in v) for v in m.vertices]
    lines.append(f"CELLS {m.num_cells} {5 * m.num_cells}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in m.cells]
    lines.append(f"CELL_TYPES {m.num_cells}")
    lines += ["10"] * m.num_cells
    if cell_data:
        lines.append(f"CELL_DATA {m.num_cells}")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape[0] != m.num_cells:
                raise ValueError(f"cell field {name!r} has {values.shape[0]} entries, mesh has {m.num_cells} cells")
            tail = values.shape[1:]
            if tail == ():
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [repr(float(v)) for v in values]
            elif tail == (3,):
                lines.append(f"VECTORS {name} double")
                lines += [" ".join(repr(float(c)) for c in v) for v in values]
            elif tail == (3, 3):
                lines.append(f"TENSORS {name} double")
                for t in values:
                    lines += [" ".join(repr(float(c)) for c in row) for row in t]
            else:
                raise ValueError(f"unsupported cell field shape {tail} for {name!r}")
    path.write_text("\n".join(lines) + "\n")
